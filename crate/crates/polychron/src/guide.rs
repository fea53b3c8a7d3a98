//! The book chapters as doc-tests.
//!
//! Each module below embeds one chapter of the mdbook guide from `book/src/`
//! so that every fenced Rust snippet in the book compiles and runs under
//! `cargo test --doc`. The book and the library cannot drift apart silently.
