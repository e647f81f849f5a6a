//! Spectrum data model, the stand-in corpus generator, fold splitting and
//! ingestion of raw instrument data.

mod classes;
mod corpus;
pub mod ingest;
pub mod io;
mod spectrum;
mod template;

pub use classes::{one_hot, regression_target, VocClass, N_CLASSES, N_SLOTS};
pub use corpus::{build_corpus, ClassRecipe, Corpus, CorpusRecipe, Split, N_FOLDS, RECIPE_FORMAT_VERSION};
pub use ingest::cell_concentration;
pub use spectrum::{channel_grid, channel_spacing, Provenance, Spectrum, N_CHANNELS, WAVENUMBER_MAX, WAVENUMBER_MIN};
pub use template::{lorentzian, Peak, PeakTemplate, TEMPLATE_FORMAT_VERSION};
