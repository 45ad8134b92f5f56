//! Settings shared by CLI subcommands. A value given as a flag (or its
//! environment variable, which clap folds into the flag) wins over the
//! config file, which wins over the built-in default.

use std::path::Path;

use serde::Deserialize;

#[derive(Clone, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub passphrase: Option<String>,
    pub do_addr: Option<String>,
    pub cs_addr: Option<String>,
    pub key_bits: Option<u64>,
    pub coord_scale: Option<u32>,
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => Ok(toml::from_str(&std::fs::read_to_string(p)?)?),
            None => Ok(FileConfig::default()),
        }
    }
}

/// First present value of flag/env, then file, then default.
pub fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
