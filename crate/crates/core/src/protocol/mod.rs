//! Two-party sessions: wire format, transports and the Alice/Bob state machines.

pub mod session;
pub mod transport;
pub mod wire;

pub use session::{
    evaluate_filter, run_local, secure_df_exchange, AliceSession, BobSession, BobSummary,
    DetectionReport, FilterEvaluation, LocalRunOptions, MatrixCache, PairContext, PairOutcome,
    QueryDoc, SessionConfig, SessionKeys, SessionMetrics, SimilarityDecision,
};
pub use transport::{
    channel_pair, ChannelTransport, LoopbackTransport, TcpTransport, Traffic, Transport,
};
pub use wire::{
    decode_frame, decode_message, encode_frame, encode_message, FilterEntry, FullEntry, Hello,
    ProtocolMessage, PROTOCOL_VERSION,
};
