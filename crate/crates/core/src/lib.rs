pub mod capability;
pub mod cbom;
pub mod commands;
pub mod inference;
pub mod layout;
pub mod lexer;
pub mod outline;
pub mod policy;
pub mod sbom;
