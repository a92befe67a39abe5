pub mod align;
pub mod extract;
pub mod gen;
pub mod profile;
pub mod run;
