//! Miniature MapReduce runtime.
//!
//! [`dfs`] stores files as replicated fixed-size blocks, [`cluster`] tracks
//! node liveness, [`streaming`] runs external worker processes, [`engine`]
//! schedules jobs over them and [`jobd`] serves it all on a TCP socket.

pub mod clock;
pub mod cluster;
pub mod config;
pub mod dfs;
pub mod engine;
pub mod jobd;
pub mod streaming;
