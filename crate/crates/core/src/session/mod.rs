//! Interactive sessions: one plan, a step cursor, cached guidance per step
//! and a countdown for widget steps, served over the `gr/1` protocol.

pub mod handler;
pub mod journal;
pub mod manager;
pub mod protocol;
pub mod relay;
pub mod server;
pub mod timer;

pub use handler::{Connection, FixtureScenes, ProtocolHandler, Stamper};
pub use journal::{Journal, JournalEntry, JournalError};
pub use manager::{Created, IdGenerator, RandomIds, SequentialIds, SessionError, SessionEvent, SessionManager, SessionView, StepGuidance};
pub use protocol::{BinaryFrame, ClientBody, ClientMessage, FrameKind, ProtocolError, ServerBody, ServerMessage, SnapshotUpload, PROTOCOL_VERSION};
pub use relay::{DirRelay, FallbackTransport, InboundSequencer, MemoryRelay, Relay, RelayError, RelayPacket, RelayServer, Route, TransportError};
pub use timer::{Countdown, Tick};
