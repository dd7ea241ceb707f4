pub mod attack;
pub mod cli;
pub mod expr;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod riskeval;
pub mod search;
pub mod seeds;
