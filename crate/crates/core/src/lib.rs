pub mod eval;
pub mod fd;
pub mod index;
pub mod kb;
pub mod lake;
pub mod numfmt;
pub mod query;
pub mod semantics;
pub mod synth;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/tables.md")]
pub struct BookTables;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/knowledge-base.md")]
pub struct BookKnowledgeBase;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/semantics.md")]
pub struct BookSemantics;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/synthesized.md")]
pub struct BookSynthesized;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/index.md")]
pub struct BookIndex;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/querying.md")]
pub struct BookQuerying;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
pub struct BookEvaluation;
