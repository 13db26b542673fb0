//! The user guide, compiled from the mdbook under `book/`.
//!
//! Each chapter is attached here as module documentation so that every
//! code snippet in the book runs under `cargo test --doc` and cannot
//! drift out of sync with the library.
