//! Declarative architecture schedules: stage lists, JSON (de)serialization,
//! validation and the named presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stage {
    /// Stride-2 reduction to `out_channels`.
    Downsample { out_channels: usize },
    /// One EDA module per dilation rate, each adding `growth` channels.
    EdaBlock {
        name: String,
        growth: usize,
        dilations: Vec<usize>,
    },
    /// Per-pixel classifier plus upsampling back to input resolution.
    Head { upsample_factor: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input_channels: usize,
    pub stages: Vec<Stage>,
}

/// Channel counts entering and leaving a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageChannels {
    pub input: usize,
    pub output: usize,
}

impl ArchitectureSpec {
    /// Checks every structural invariant; all constructors funnel through here.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Spec("name must not be empty".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::Spec("input_channels must be positive".into()));
        }
        let heads = self.stages.iter().filter(|s| matches!(s, Stage::Head { .. })).count();
        match (heads, self.stages.last()) {
            (0, _) => return Err(Error::Spec("missing head stage".into())),
            (1, Some(Stage::Head { .. })) => {}
            (1, _) => return Err(Error::Spec("head must be the last stage".into())),
            (n, _) => return Err(Error::Spec(format!("exactly one head allowed, found {n}"))),
        }
        let mut names = std::collections::HashSet::new();
        for (i, stage) in self.stages.iter().enumerate() {
            match stage {
                Stage::Downsample { out_channels } => {
                    if *out_channels == 0 {
                        return Err(Error::Spec(format!("stage {i}: downsample out_channels must be positive")));
                    }
                }
                Stage::EdaBlock { name, growth, dilations } => {
                    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                        return Err(Error::Spec(format!(
                            "stage {i}: block name `{name}` must be non-empty [A-Za-z0-9_-]"
                        )));
                    }
                    if !names.insert(name.as_str()) {
                        return Err(Error::Spec(format!("duplicate block name `{name}`")));
                    }
                    if *growth == 0 {
                        return Err(Error::Spec(format!("block {name}: growth must be positive")));
                    }
                    if dilations.is_empty() {
                        return Err(Error::Spec(format!("block {name}: needs at least one module (dilation list is empty)")));
                    }
                    if dilations.contains(&0) {
                        return Err(Error::Spec(format!("block {name}: dilation rates must be positive")));
                    }
                }
                Stage::Head { upsample_factor } => {
                    let down = self.downsample_factor();
                    if *upsample_factor != down {
                        return Err(Error::Spec(format!(
                            "resolution not restored: 1/{down} · ×{upsample_factor}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn downsample_count(&self) -> usize {
        self.stages.iter().filter(|s| matches!(s, Stage::Downsample { .. })).count()
    }

    /// Product of all stage strides before the head.
    pub fn downsample_factor(&self) -> usize {
        1 << self.downsample_count()
    }

    /// Input channels and output channels of every stage, for `num_classes`
    /// head outputs.
    pub fn channel_plan(&self, num_classes: usize) -> Vec<StageChannels> {
        let mut c = self.input_channels;
        self.stages
            .iter()
            .map(|s| {
                let input = c;
                c = match s {
                    Stage::Downsample { out_channels } => *out_channels,
                    Stage::EdaBlock { growth, dilations, .. } => c + growth * dilations.len(),
                    Stage::Head { .. } => num_classes,
                };
                StageChannels { input, output: c }
            })
            .collect()
    }

    /// Channel count entering the head.
    pub fn feature_channels(&self) -> usize {
        let plan = self.channel_plan(1);
        plan.last().map_or(self.input_channels, |s| s.input)
    }

    pub fn head_factor(&self) -> usize {
        match self.stages.last() {
            Some(Stage::Head { upsample_factor }) => *upsample_factor,
            _ => 1,
        }
    }

    pub fn module_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| match s {
                Stage::EdaBlock { dilations, .. } => dilations.len(),
                _ => 0,
            })
            .sum()
    }

    pub fn max_dilation(&self) -> usize {
        self.stages
            .iter()
            .filter_map(|s| match s {
                Stage::EdaBlock { dilations, .. } => dilations.iter().copied().max(),
                _ => None,
            })
            .max()
            .unwrap_or(1)
    }

    pub fn block(&self, name: &str) -> Option<&Stage> {
        self.stages
            .iter()
            .find(|s| matches!(s, Stage::EdaBlock { name: n, .. } if n == name))
    }

    /// Display label for stage `index` (`ds1`, `block1`, `head`, ...).
    pub fn stage_label(&self, index: usize) -> String {
        match &self.stages[index] {
            Stage::Downsample { .. } => {
                let ordinal = self.stages[..=index]
                    .iter()
                    .filter(|s| matches!(s, Stage::Downsample { .. }))
                    .count();
                format!("ds{ordinal}")
            }
            Stage::EdaBlock { name, .. } => name.clone(),
            Stage::Head { .. } => "head".into(),
        }
    }
}

/// Parses and validates a JSON schedule.
pub fn parse_spec(text: &str) -> Result<ArchitectureSpec> {
    let spec: ArchitectureSpec = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}

pub fn serialize_spec(spec: &ArchitectureSpec) -> String {
    serde_json::to_string_pretty(spec).expect("spec serializes")
}

fn ds(out_channels: usize) -> Stage {
    Stage::Downsample { out_channels }
}

fn block(name: &str, growth: usize, dilations: &[usize]) -> Stage {
    Stage::EdaBlock {
        name: name.into(),
        growth,
        dilations: dilations.to_vec(),
    }
}

fn head(upsample_factor: usize) -> Stage {
    Stage::Head { upsample_factor }
}

const EDANET_BLOCK1: [usize; 5] = [1, 1, 1, 2, 2];
const EDANET_BLOCK2: [usize; 8] = [2, 2, 4, 4, 8, 8, 16, 16];
const DD_RATES: [usize; 4] = [8, 4, 2, 1];

/// Full-size networks followed by their desk-scale counterparts.
pub const PRESET_NAMES: [&str; 18] = [
    "edanet",
    "eda-fss",
    "network-a",
    "network-b",
    "eda-ddb",
    "eda-wo-di",
    "eda-ddb-l",
    "eda-large-1",
    "eda-large-16",
    "tiny-edanet",
    "tiny-eda-fss",
    "tiny-network-a",
    "tiny-network-b",
    "tiny-eda-ddb",
    "tiny-eda-wo-di",
    "tiny-eda-ddb-l",
    "tiny-eda-large-1",
    "tiny-eda-large-16",
];

/// Baseline with extra stages spliced in between block2 and the head.
fn edanet_with(block2: &[usize], extra: Option<(&str, &[usize])>) -> Vec<Stage> {
    let mut stages = vec![
        ds(15),
        ds(60),
        block("block1", 40, &EDANET_BLOCK1),
        ds(130),
        block("block2", 40, block2),
    ];
    if let Some((n, rates)) = extra {
        stages.push(block(n, 40, rates));
    }
    stages.push(head(8));
    stages
}

fn tiny_edanet_with(block2: &[usize], extra: Option<(&str, &[usize])>) -> Vec<Stage> {
    let mut stages = vec![ds(16), ds(32), block("block1", 8, &[1, 1, 2]), block("block2", 8, block2)];
    if let Some((n, rates)) = extra {
        stages.push(block(n, 8, rates));
    }
    stages.push(head(4));
    stages
}

/// Returns the named preset schedule.
pub fn preset(name: &str) -> Result<ArchitectureSpec> {
    let stages = match name {
        "edanet" => edanet_with(&EDANET_BLOCK2, None),
        "eda-fss" => vec![
            ds(15),
            block("block0", 30, &[1, 1]),
            ds(60),
            block("block1", 30, &[1, 1, 2, 2]),
            ds(130),
            block("block2", 30, &[2, 4, 8, 16, 16]),
            head(8),
        ],
        "network-a" => vec![
            ds(15),
            block("block0", 30, &[1, 1, 1, 1]),
            ds(60),
            block("block1", 30, &[2, 4, 8, 16]),
            head(4),
        ],
        "network-b" => vec![
            block("block-1", 30, &[1, 1]),
            ds(15),
            block("block0", 30, &[1]),
            ds(60),
            head(4),
        ],
        "eda-ddb" => edanet_with(&[2, 4, 8, 16], Some(("dd_block", &DD_RATES))),
        "eda-wo-di" => vec![
            ds(15),
            ds(60),
            block("block1", 40, &[1; 5]),
            ds(130),
            block("block2", 40, &[1; 8]),
            head(8),
        ],
        "eda-ddb-l" => edanet_with(&EDANET_BLOCK2, Some(("dd_block", &DD_RATES))),
        "eda-large-1" => edanet_with(&EDANET_BLOCK2, Some(("extra_block", &[1; 4]))),
        "eda-large-16" => edanet_with(&EDANET_BLOCK2, Some(("extra_block", &[16; 4]))),
        "tiny-edanet" => tiny_edanet_with(&[2, 4, 8, 16], None),
        "tiny-eda-fss" => vec![
            ds(16),
            block("block0", 8, &[1]),
            ds(32),
            block("block1", 8, &[1, 2]),
            block("block2", 8, &[2, 8, 16]),
            head(4),
        ],
        "tiny-network-a" => vec![ds(16), block("block0", 8, &[1, 1]), ds(32), block("block1", 8, &[2, 8]), head(4)],
        "tiny-network-b" => vec![block("block-1", 8, &[1]), ds(16), block("block0", 8, &[1]), ds(32), head(4)],
        "tiny-eda-ddb" => tiny_edanet_with(&[2, 8], Some(("dd_block", &[4, 1]))),
        "tiny-eda-wo-di" => vec![ds(16), ds(32), block("block1", 8, &[1; 3]), block("block2", 8, &[1; 4]), head(4)],
        "tiny-eda-ddb-l" => tiny_edanet_with(&[2, 4, 8, 16], Some(("dd_block", &[4, 1]))),
        "tiny-eda-large-1" => tiny_edanet_with(&[2, 4, 8, 16], Some(("extra_block", &[1, 1]))),
        "tiny-eda-large-16" => tiny_edanet_with(&[2, 4, 8, 16], Some(("extra_block", &[16, 16]))),
        _ => {
            return Err(Error::UnknownPreset {
                name: name.into(),
                valid: PRESET_NAMES.join(", "),
            })
        }
    };
    let spec = ArchitectureSpec {
        name: name.into(),
        input_channels: 3,
        stages,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dilations(spec: &ArchitectureSpec, name: &str) -> Vec<usize> {
        match spec.block(name) {
            Some(Stage::EdaBlock { dilations, .. }) => dilations.clone(),
            _ => panic!("no block {name}"),
        }
    }

    #[test]
    fn all_presets_validate_and_round_trip() {
        for name in PRESET_NAMES {
            let spec = preset(name).unwrap();
            assert_eq!(parse_spec(&serialize_spec(&spec)).unwrap(), spec, "{name}");
        }
    }

    #[test]
    fn ddb_schedules() {
        let spec = preset("eda-ddb").unwrap();
        let reparsed = parse_spec(&serialize_spec(&spec)).unwrap();
        assert_eq!(dilations(&reparsed, "block2"), vec![2, 4, 8, 16]);
        assert_eq!(dilations(&reparsed, "dd_block"), vec![8, 4, 2, 1]);
        assert_eq!(dilations(&preset("edanet").unwrap(), "block2").len(), 8);
        assert_eq!(preset("eda-wo-di").unwrap().max_dilation(), 1);
    }

    #[test]
    fn channel_arithmetic_closes() {
        assert_eq!(preset("edanet").unwrap().feature_channels(), 450);
        assert_eq!(preset("eda-ddb").unwrap().feature_channels(), 450);
        let plan = preset("edanet").unwrap().channel_plan(6);
        let outs: Vec<usize> = plan.iter().map(|s| s.output).collect();
        assert_eq!(outs, vec![15, 60, 260, 130, 450, 6]);
        let b = preset("network-b").unwrap().channel_plan(6);
        assert_eq!(b[0].output, 63);
        assert_eq!(b[1], StageChannels { input: 63, output: 15 });
    }

    #[test]
    fn fss_block0_sits_between_first_two_downsamples() {
        let spec = preset("eda-fss").unwrap();
        assert!(matches!(spec.stages[0], Stage::Downsample { .. }));
        assert!(matches!(&spec.stages[1], Stage::EdaBlock { name, .. } if name == "block0"));
        assert!(matches!(spec.stages[2], Stage::Downsample { .. }));
    }

    #[test]
    fn unrestored_resolution_is_rejected() {
        let text = r#"{"name":"x","input_channels":3,"stages":[
            {"type":"downsample","out_channels":8},
            {"type":"downsample","out_channels":16},
            {"type":"downsample","out_channels":32},
            {"type":"head","upsample_factor":4}]}"#;
        let err = parse_spec(text).unwrap_err().to_string();
        assert!(err.contains("resolution not restored: 1/8 · ×4"), "{err}");
    }

    #[test]
    fn unknown_keys_and_syntax_errors() {
        let extra = r#"{"name":"x","input_channels":3,"colour":1,"stages":[{"type":"head","upsample_factor":1}]}"#;
        assert!(parse_spec(extra).is_err());
        let extra_stage = r#"{"name":"x","input_channels":3,"stages":[{"type":"head","upsample_factor":1,"bias":true}]}"#;
        assert!(parse_spec(extra_stage).is_err());
        let broken = "{\n  \"name\": \"x\",\n  \"input_channels\": 3,\n  \"stages\": [\n}";
        match parse_spec(broken).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 5),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn head_placement() {
        let mut spec = preset("tiny-edanet").unwrap();
        spec.stages.swap(0, 4);
        assert!(spec.validate().unwrap_err().to_string().contains("last"));
        spec.stages.push(head(4));
        assert!(spec.validate().is_err());
    }

    #[test]
    fn unknown_preset_lists_names() {
        let err = preset("resnet").unwrap_err().to_string();
        assert!(err.contains("edanet") && err.contains("eda-large-16"), "{err}");
    }
}
