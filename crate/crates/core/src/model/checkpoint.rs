//! Text checkpoints.
//!
//! ```text
//! kcd-checkpoint 1
//! {"input_dim":768,...}
//! [infusion.w_a]
//! 768 768
//! 0 <768 values>
//! ...
//! 767 <768 values>
//! [infusion.b_a]
//! ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "kcd-checkpoint 1";

impl Model {
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::with_capacity(self.params.scalar_count() * 24 + 1024);
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        out.push_str(&serde_json::to_string(&self.config).expect("config serializes"));
        out.push('\n');
        for (_, name, value) in self.params.iter() {
            let _ = writeln!(out, "[{name}]\n{} {}", value.nrows(), value.ncols());
            for (i, row) in value.rows().into_iter().enumerate() {
                let _ = write!(out, "{i}");
                for v in row {
                    let _ = write!(out, " {v:.16e}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_checkpoint(text: &str, path: &Path) -> Result<Model> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, h)) if h.trim() == CHECKPOINT_HEADER => {}
            _ => {
                return Err(Error::parse(
                    path,
                    1,
                    format!("expected `{CHECKPOINT_HEADER}`"),
                ))
            }
        }
        let (n, meta) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 2, "missing configuration"))?;
        let config: ModelConfig = serde_json::from_str(meta)
            .map_err(|e| Error::parse(path, n, format!("bad configuration: {e}")))?;
        let mut model = Model::new(config, 0)?;
        let mut loaded = vec![false; model.params.len()];
        while let Some((n, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let name = line
                .strip_prefix('[')
                .and_then(|l| l.strip_suffix(']'))
                .ok_or_else(|| Error::parse(path, n, "expected `[parameter name]`"))?;
            let id = model
                .params
                .find(name)
                .ok_or_else(|| Error::parse(path, n, format!("unknown parameter `{name}`")))?;
            let (n, shape) = lines
                .next()
                .ok_or_else(|| Error::parse(path, n + 1, "missing shape"))?;
            let dims: Vec<usize> = shape
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, n, format!("bad shape `{shape}`")))?;
            let expected = model.params.get(id).dim();
            if dims != [expected.0, expected.1] {
                return Err(Error::parse(
                    path,
                    n,
                    format!("`{name}` has shape {dims:?}, expected {expected:?}"),
                ));
            }
            let mut value = Array2::zeros(expected);
            for r in 0..expected.0 {
                let (n, row) = lines.next().ok_or_else(|| {
                    Error::parse(path, n + r + 1, format!("`{name}` is truncated"))
                })?;
                let mut fields = row.split_whitespace();
                if fields.next() != Some(r.to_string().as_str()) {
                    return Err(Error::parse(
                        path,
                        n,
                        format!("expected row {r} of `{name}`"),
                    ));
                }
                let vals: Vec<f64> = fields
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::parse(path, n, "unparseable value"))?;
                if vals.len() != expected.1 || vals.iter().any(|v| !v.is_finite()) {
                    return Err(Error::parse(
                        path,
                        n,
                        format!("expected {} finite values", expected.1),
                    ));
                }
                value.row_mut(r).assign(&ndarray::Array1::from(vals));
            }
            *model.params.get_mut(id) = value;
            loaded[id.0] = true;
        }
        if let Some(missing) = loaded.iter().position(|l| !l) {
            return Err(Error::Invalid(format!(
                "{}: parameter `{}` missing from checkpoint",
                path.display(),
                model.params.name(crate::tensor::ParamId(missing))
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_checkpoint(&text, path)
    }
}
