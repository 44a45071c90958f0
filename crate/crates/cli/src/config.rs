//! Merging of defaults, the config file and command-line overrides.

use flowseg_core::{io, SegmentationConfig, StorageMode};

use crate::args::ConfigArgs;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl Source {
    fn as_str(self) -> &'static str {
        match self {
            Source::Default => "default",
            Source::File => "config file",
            Source::Flag => "flag",
        }
    }
}

pub const FIELDS: [&str; 13] = [
    "beta",
    "expansion_l",
    "inflation_r",
    "prune_tau",
    "affinity_floor",
    "flow_tol",
    "max_flow_iters",
    "gamma",
    "prop_tol",
    "max_prop_iters",
    "storage_mode",
    "topk_cap",
    "merge_attractors",
];

#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: SegmentationConfig,
    pub sources: Vec<(&'static str, Source)>,
}

impl Resolved {
    pub fn describe(&self) -> String {
        let values = serde_json::to_value(&self.config).expect("config serializes");
        self.sources
            .iter()
            .map(|(name, src)| format!("{name} = {} ({})\n", values[name], src.as_str()))
            .collect()
    }
}

/// Flags beat the config file, which beats the defaults. Validation runs on
/// the merged result only.
pub fn resolve(args: &ConfigArgs) -> Result<Resolved, CliError> {
    let (mut cfg, file_keys) = match &args.config {
        Some(path) => io::read_config_partial(path)?,
        None => (SegmentationConfig::default(), Vec::new()),
    };
    let mut flagged: Vec<&'static str> = Vec::new();
    macro_rules! apply {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field {
                cfg.$field = v;
                flagged.push(stringify!($field));
            }
        )*};
    }
    apply!(
        beta,
        expansion_l,
        inflation_r,
        prune_tau,
        affinity_floor,
        flow_tol,
        max_flow_iters,
        gamma,
        prop_tol,
        max_prop_iters,
        merge_attractors
    );
    if let Some(cap) = args.topk_cap {
        cfg.topk_cap = Some(cap);
        flagged.push("topk_cap");
    }
    if let Some(mode) = &args.storage_mode {
        cfg.storage_mode = mode
            .parse::<StorageMode>()
            .map_err(|e| CliError::Usage(format!("--storage-mode: {e}")))?;
        flagged.push("storage_mode");
    }
    cfg.validate()?;
    let sources = FIELDS
        .iter()
        .map(|&name| {
            let src = if flagged.contains(&name) {
                Source::Flag
            } else if file_keys.iter().any(|k| k == name) {
                Source::File
            } else {
                Source::Default
            };
            (name, src)
        })
        .collect();
    Ok(Resolved {
        config: cfg,
        sources,
    })
}
