//! Channel-aware stochastic gradient quantization for federated learning
//! over a Gaussian multiple access channel.

pub mod allocator;
pub mod baselines;
pub mod channel;
pub mod quantizer;
pub mod rng;
pub mod trainer;
