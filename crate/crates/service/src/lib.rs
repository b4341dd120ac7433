//! Operational shell around the `convroutine` runtime: configuration, the
//! live chat-completions client, the HTTP/WebSocket API and the terminal REPL.

pub mod config;
pub mod live;
pub mod repl;
pub mod runtime;
pub mod server;
