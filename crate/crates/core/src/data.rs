//! Default resources compiled into the crate. The files live under `data/`
//! and can be replaced at runtime through the CLI.

pub const PATTERNS_FR: &str = include_str!("../data/patterns_fr.json");
pub const STOPWORDS_FR: &str = include_str!("../data/stopwords_fr.txt");
pub const LEXICON_FR: &str = include_str!("../data/lexicon_fr.csv");
pub const TEMPLATES_FR: &str = include_str!("../data/templates_fr.json");
pub const EQUIVALENCE_MARKERS_FR: &str = include_str!("../data/equivalence_markers_fr.txt");
