//! Fading link model: Gauss-Markov channel evolution, Shannon capacity as the semantic
//! capacity proxy, two-mode rate adaptation, a prototype knowledge base that replaces
//! recurring feature vectors with tokens, and analog feature transmission.

mod kb;
mod link;
mod state;

pub use kb::{KbSymbol, KnowledgeBase};
pub use link::{transmit, transmit_unclamped, Link, TraceRow, TransmitReport};
pub use state::{
    adapt_rate, draw_fading, evolve_channel, semantic_capacity, ChannelDynamics, ChannelState,
    ProtocolMode, RateDecision, MIN_FADING,
};
