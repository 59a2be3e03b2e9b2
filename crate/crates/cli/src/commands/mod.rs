pub mod curriculum;
pub mod eval;
pub mod langid;
pub mod mono;
pub mod pack;
pub mod para;
pub mod reward;
pub mod tok;
