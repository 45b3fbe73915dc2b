pub mod imaging;
pub mod ocr;
pub mod refinement;
pub mod bench;
pub mod ledger;
pub mod service;
pub mod cli;
