pub mod elliptic;
pub mod dispersion;
pub mod strings;
pub mod stringfeas;
pub mod tba;
pub mod exactdiag;
pub mod cli;
