// mdbook cannot run the chapters' code against a workspace crate, so every
// chapter is pulled in as the docs of an empty module and `cargo test --doc`
// runs its code blocks. A failing doc-test is named after the module, which
// points back at the chapter.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/tensors.md")]
pub mod tensors {}
#[doc = include_str!("src/rotation.md")]
pub mod rotation {}
#[doc = include_str!("src/network.md")]
pub mod network {}
#[doc = include_str!("src/training.md")]
pub mod training {}
#[doc = include_str!("src/flow-files.md")]
pub mod flow_files {}
#[doc = include_str!("src/command-line.md")]
pub mod command_line {}
