pub mod capture;
pub mod cmsr;
pub mod eval;
pub mod llm;
pub mod experience;
pub mod refine;
pub mod bench;
pub mod bt;
pub mod sim;
pub mod strategy;
