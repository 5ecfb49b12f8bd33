//! Replay storage for both levels and the triplet store behind representation learning.

mod buffer;
mod triplets;

pub use buffer::{
    dump_high, dump_low, Candidate, HasState, HighTransition, LowTransition, ReplayBuffer,
};
pub use triplets::{Triplet, TripletStore, PRIORITY_EPS, REFRESH_CAP};
