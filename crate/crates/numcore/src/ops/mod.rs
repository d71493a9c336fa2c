pub mod basic;
pub mod conv;
pub mod gru;
pub mod loss;
pub mod sample;
