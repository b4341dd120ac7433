//! Runtime for conversational agents driven by natural-language routines.
//!
//! An agent is a routine (plain-text system prompt with embedded workflow
//! rules) plus a set of typed tools. The [`orchestrator`] runs the
//! chat-completion loop against any [`backend::ChatBackend`], dispatching tool
//! calls and following handoffs between agents.

pub mod backend;
pub mod bundled;
pub mod clock;
pub mod orchestrator;
pub mod procedure;
pub mod replay;
pub mod routines;
pub mod scenario;
pub mod telemetry;
pub mod tools;
pub mod train;
pub mod troubleshooting;
pub mod types;
pub mod wire;
