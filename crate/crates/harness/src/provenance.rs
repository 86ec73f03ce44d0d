use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::{ExperimentConfig, TestSet};

pub const CODE_VERSION: &str = concat!("metampc ", env!("CARGO_PKG_VERSION"));

/// Identifies the inputs behind a results file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub test_set_hash: String,
    pub code_version: String,
}

impl Provenance {
    pub fn new(config: &ExperimentConfig, test_set: &TestSet) -> Self {
        Self {
            config_hash: config.hash(),
            test_set_hash: test_set.hash().to_string(),
            code_version: CODE_VERSION.to_string(),
        }
    }

    /// `#`-prefixed lines placed at the top of data files.
    pub fn write_comment<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# config_hash {}", self.config_hash)?;
        writeln!(w, "# test_set_hash {}", self.test_set_hash)?;
        writeln!(w, "# code_version {}", self.code_version)
    }
}
