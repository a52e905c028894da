//! Versioned text checkpoints: real code, schedule, network tensors,
//! optimizer state and seed. Values are stored as hex-encoded f64 bits so
//! resume is lossless.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

use super::net::{NetConfig, NetworkParams};
use super::{AnnealSchedule, OptState, TrainState};

const MAGIC: &str = "defocus-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub seed: u64,
    pub schedule: AnnealSchedule,
    pub state: TrainState,
}

fn push_tensor(out: &mut String, name: &str, data: &[f64]) {
    let _ = writeln!(out, "tensor {name} {}", data.len());
    for chunk in data.chunks(8) {
        let words: Vec<String> = chunk.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
        let _ = writeln!(out, "{}", words.join(" "));
    }
}

fn net_line(cfg: &NetConfig) -> String {
    format!(
        "net {} {} {} {} {} {} {} {} {}",
        cfg.input_side,
        cfg.conv_channels[0],
        cfg.conv_channels[1],
        cfg.conv_channels[2],
        cfg.fc_widths[0],
        cfg.fc_widths[1],
        cfg.fc_widths[2],
        cfg.fc_widths[3],
        cfg.classes
    )
}

fn push_params(out: &mut String, prefix: &str, params: &NetworkParams) {
    for (i, layer) in params.conv.iter().enumerate() {
        push_tensor(out, &format!("{prefix}conv{i}.weight"), &layer.weight);
        push_tensor(out, &format!("{prefix}conv{i}.bias"), &layer.bias);
    }
    for (i, layer) in params.fc.iter().enumerate() {
        push_tensor(out, &format!("{prefix}fc{i}.weight"), &layer.weight);
        push_tensor(out, &format!("{prefix}fc{i}.bias"), &layer.bias);
    }
}

impl Checkpoint {
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} v{VERSION}");
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "iteration {}", self.state.iteration);
        let _ = writeln!(
            out,
            "schedule {:016x} {:016x}",
            self.schedule.base.to_bits(),
            self.schedule.slope_inv.to_bits()
        );
        let _ = writeln!(out, "opt_step {}", self.state.opt.step);
        let _ = writeln!(out, "code_side {}", self.state.w.h());
        let _ = writeln!(out, "{}", net_line(&self.state.params.cfg));
        push_tensor(&mut out, "w", self.state.w.as_slice());
        push_tensor(&mut out, "opt.m_w", self.state.opt.m_w.as_slice());
        push_tensor(&mut out, "opt.v_w", self.state.opt.v_w.as_slice());
        push_params(&mut out, "", &self.state.params);
        push_params(&mut out, "opt.m.", &self.state.opt.m_p);
        push_params(&mut out, "opt.v.", &self.state.opt.v_p);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn deserialize(text: &str, origin: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format {
            path: origin.to_string(),
            msg,
        };
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| bad("empty checkpoint".into()))?;
        if head != format!("{MAGIC} v{VERSION}") {
            return Err(bad(format!("unsupported header '{head}'")));
        }

        let mut seed = None;
        let mut iteration = None;
        let mut schedule = None;
        let mut opt_step = None;
        let mut code_side = None;
        let mut cfg: Option<NetConfig> = None;
        let mut tensors: Vec<(String, Vec<f64>)> = Vec::new();

        let mut lines = lines.peekable();
        while let Some(line) = lines.next() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("seed") => {
                    seed = Some(parse_u64(parts.next(), "seed", origin)?);
                }
                Some("iteration") => {
                    iteration = Some(parse_u64(parts.next(), "iteration", origin)?);
                }
                Some("opt_step") => {
                    opt_step = Some(parse_u64(parts.next(), "opt_step", origin)?);
                }
                Some("code_side") => {
                    code_side = Some(parse_u64(parts.next(), "code_side", origin)? as usize);
                }
                Some("schedule") => {
                    let base = parse_f64_bits(parts.next(), "schedule base", origin)?;
                    let slope = parse_f64_bits(parts.next(), "schedule slope", origin)?;
                    schedule = Some(AnnealSchedule {
                        base,
                        slope_inv: slope,
                    });
                }
                Some("net") => {
                    let mut vals = Vec::new();
                    for part in parts {
                        vals.push(part.parse::<usize>().map_err(|e| bad(e.to_string()))?);
                    }
                    if vals.len() != 9 {
                        return Err(bad("net line needs 9 fields".into()));
                    }
                    cfg = Some(NetConfig {
                        input_side: vals[0],
                        conv_channels: [vals[1], vals[2], vals[3]],
                        fc_widths: [vals[4], vals[5], vals[6], vals[7]],
                        classes: vals[8],
                    });
                }
                Some("tensor") => {
                    let name = parts
                        .next()
                        .ok_or_else(|| bad("tensor line missing name".into()))?
                        .to_string();
                    let len = parse_u64(parts.next(), "tensor length", origin)? as usize;
                    let mut data = Vec::with_capacity(len);
                    while data.len() < len {
                        let row = lines
                            .next()
                            .ok_or_else(|| bad(format!("tensor {name} truncated")))?;
                        for word in row.split_whitespace() {
                            let bits = u64::from_str_radix(word, 16)
                                .map_err(|e| bad(format!("tensor {name}: {e}")))?;
                            data.push(f64::from_bits(bits));
                        }
                    }
                    if data.len() != len {
                        return Err(bad(format!("tensor {name} has wrong length")));
                    }
                    tensors.push((name, data));
                }
                Some(other) => return Err(bad(format!("unknown field '{other}'"))),
                None => {}
            }
        }

        let cfg = cfg.ok_or_else(|| bad("missing net line".into()))?;
        let side = code_side.ok_or_else(|| bad("missing code_side".into()))?;
        let take = |name: &str, tensors: &mut Vec<(String, Vec<f64>)>| -> Result<Vec<f64>> {
            let idx = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            Ok(tensors.remove(idx).1)
        };

        let w = Grid::from_vec(side, side, take("w", &mut tensors)?);
        let m_w = Grid::from_vec(side, side, take("opt.m_w", &mut tensors)?);
        let v_w = Grid::from_vec(side, side, take("opt.v_w", &mut tensors)?);

        let load_params = |prefix: &str, tensors: &mut Vec<(String, Vec<f64>)>| -> Result<NetworkParams> {
            let mut params = NetworkParams::init(cfg, 0)?.zeros_like();
            for (i, layer) in params.conv.iter_mut().enumerate() {
                layer.weight = take(&format!("{prefix}conv{i}.weight"), tensors)?;
                layer.bias = take(&format!("{prefix}conv{i}.bias"), tensors)?;
                if layer.weight.len() != layer.c_out * layer.c_in * 9 {
                    return Err(bad(format!("conv{i} weight shape mismatch")));
                }
            }
            for (i, layer) in params.fc.iter_mut().enumerate() {
                layer.weight = take(&format!("{prefix}fc{i}.weight"), tensors)?;
                layer.bias = take(&format!("{prefix}fc{i}.bias"), tensors)?;
                if layer.weight.len() != layer.dim_out * layer.dim_in {
                    return Err(bad(format!("fc{i} weight shape mismatch")));
                }
            }
            Ok(params)
        };

        let params = load_params("", &mut tensors)?;
        let m_p = load_params("opt.m.", &mut tensors)?;
        let v_p = load_params("opt.v.", &mut tensors)?;

        Ok(Checkpoint {
            seed: seed.ok_or_else(|| bad("missing seed".into()))?,
            schedule: schedule.ok_or_else(|| bad("missing schedule".into()))?,
            state: TrainState {
                iteration: iteration.ok_or_else(|| bad("missing iteration".into()))?,
                w,
                params,
                opt: OptState {
                    step: opt_step.ok_or_else(|| bad("missing opt_step".into()))?,
                    m_w,
                    v_w,
                    m_p,
                    v_p,
                },
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::deserialize(&text, &path.display().to_string())
    }
}

fn parse_u64(part: Option<&str>, what: &str, origin: &str) -> Result<u64> {
    part.ok_or_else(|| Error::Format {
        path: origin.to_string(),
        msg: format!("missing {what}"),
    })?
    .parse()
    .map_err(|e| Error::Format {
        path: origin.to_string(),
        msg: format!("{what}: {e}"),
    })
}

fn parse_f64_bits(part: Option<&str>, what: &str, origin: &str) -> Result<f64> {
    let word = part.ok_or_else(|| Error::Format {
        path: origin.to_string(),
        msg: format!("missing {what}"),
    })?;
    let bits = u64::from_str_radix(word, 16).map_err(|e| Error::Format {
        path: origin.to_string(),
        msg: format!("{what}: {e}"),
    })?;
    Ok(f64::from_bits(bits))
}
