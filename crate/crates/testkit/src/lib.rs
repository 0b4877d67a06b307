//! Test support for the uqih crates: slow, definition-level reference
//! implementations and seeded synthetic fixtures.

pub mod fixtures;
pub mod oracle;
