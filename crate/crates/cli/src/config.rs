//! Flat `key = value` configuration files and quantization-matrix files.
//!
//! Config keys mirror [`CodecConfig`]: `bit_depth`, `base_q_idx`,
//! `y_dc_delta`, `uv_dc_delta`, `lambda_scale`, `seed`, `chroma` (`420` or
//! `444`), the tool switches `tcq`, `ph`, `fsc`, `ist`, `cctx`, `lossless`
//! (`true`/`false`, `on`/`off`, `1`/`0`) and `qm`, a matrix file path
//! resolved against the config file's directory. `#` starts a comment.
//!
//! A matrix file holds one matrix per line: plane (`Y`, `U`, `V`), width,
//! height, then `width * height` weights in row-major order.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use avtx::block_codec::{ChromaFormat, CodecConfig};
use avtx::quantizer::QMatrix;
use avtx::Plane;

/// Settings read from a config file; unset keys stay `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub bit_depth: Option<u8>,
    pub base_q_idx: Option<u16>,
    pub y_dc_delta: Option<i8>,
    pub uv_dc_delta: Option<i8>,
    pub lambda_scale: Option<f64>,
    pub seed: Option<u64>,
    pub chroma: Option<ChromaFormat>,
    pub tcq: Option<bool>,
    pub ph: Option<bool>,
    pub fsc: Option<bool>,
    pub ist: Option<bool>,
    pub cctx: Option<bool>,
    pub lossless: Option<bool>,
    pub qm: Option<PathBuf>,
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "on" | "yes" => Some(true),
        "0" | "false" | "off" | "no" => Some(false),
        _ => None,
    }
}

pub fn parse_chroma(v: &str) -> Result<ChromaFormat> {
    match v {
        "420" | "yuv420" => Ok(ChromaFormat::Yuv420),
        "444" | "yuv444" => Ok(ChromaFormat::Yuv444),
        _ => bail!("unknown chroma format {v:?}; expected 420 or 444"),
    }
}

impl ConfigFile {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c = ConfigFile::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = || format!("line {}", n + 1);
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("{}: expected key = value", at()))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |what: &str| anyhow!("{}: {k} = {v:?} is not a valid {what}", at());
            let flag = || parse_bool(v).ok_or_else(|| num("switch"));
            match k {
                "bit_depth" => c.bit_depth = Some(v.parse().map_err(|_| num("bit depth"))?),
                "base_q_idx" => c.base_q_idx = Some(v.parse().map_err(|_| num("q index"))?),
                "y_dc_delta" => c.y_dc_delta = Some(v.parse().map_err(|_| num("delta"))?),
                "uv_dc_delta" => c.uv_dc_delta = Some(v.parse().map_err(|_| num("delta"))?),
                "lambda_scale" => c.lambda_scale = Some(v.parse().map_err(|_| num("number"))?),
                "seed" => c.seed = Some(parse_seed(v).map_err(|_| num("seed"))?),
                "chroma" => c.chroma = Some(parse_chroma(v).with_context(at)?),
                "tcq" => c.tcq = Some(flag()?),
                "ph" => c.ph = Some(flag()?),
                "fsc" => c.fsc = Some(flag()?),
                "ist" => c.ist = Some(flag()?),
                "cctx" => c.cctx = Some(flag()?),
                "lossless" => c.lossless = Some(flag()?),
                "qm" => c.qm = Some(base_dir.join(v)),
                _ => bail!("{}: unknown key {k:?}", at()),
            }
        }
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, dir).with_context(|| format!("in {}", path.display()))
    }

    pub fn apply(&self, cfg: &mut CodecConfig) -> Result<()> {
        macro_rules! set {
            ($($f:ident => $dst:expr),* $(,)?) => {$(if let Some(v) = self.$f { $dst = v; })*};
        }
        set!(
            bit_depth => cfg.bit_depth,
            base_q_idx => cfg.base_q_idx,
            y_dc_delta => cfg.y_dc_delta,
            uv_dc_delta => cfg.uv_dc_delta,
            lambda_scale => cfg.lambda_scale,
            seed => cfg.seed,
            chroma => cfg.chroma,
            tcq => cfg.tools.tcq,
            ph => cfg.tools.ph,
            fsc => cfg.tools.fsc,
            ist => cfg.tools.ist,
            cctx => cfg.tools.cctx,
            lossless => cfg.tools.lossless,
        );
        if let Some(p) = &self.qm {
            cfg.qm = read_qm_file(p)?;
            cfg.tools.qm = true;
        }
        Ok(())
    }
}

/// Decimal or `0x` hexadecimal.
pub fn parse_seed(v: &str) -> std::result::Result<u64, std::num::ParseIntError> {
    match v.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(&h.replace('_', ""), 16),
        None => v.replace('_', "").parse(),
    }
}

pub fn parse_qm(text: &str) -> Result<Vec<QMatrix>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = || format!("line {}", n + 1);
        let mut it = line.split_whitespace();
        let plane = match it.next() {
            Some("Y") => Plane::Y,
            Some("U") => Plane::U,
            Some("V") => Plane::V,
            other => bail!("{}: unknown plane {other:?}", at()),
        };
        let nums: Vec<usize> = it.map(|t| t.parse()).collect::<std::result::Result<_, _>>().map_err(|e| anyhow!("{}: {e}", at()))?;
        let [w, h, weights @ ..] = nums.as_slice() else {
            bail!("{}: expected plane, width, height and weights", at());
        };
        let weights: Vec<u8> = weights
            .iter()
            .map(|&v| u8::try_from(v).map_err(|_| anyhow!("{}: weight {v} exceeds 255", at())))
            .collect::<Result<_>>()?;
        out.push(QMatrix::new(plane, *w, *h, weights).with_context(at)?);
    }
    if out.len() > u8::MAX as usize {
        bail!("at most 255 matrices per file");
    }
    Ok(out)
}

pub fn read_qm_file(path: &Path) -> Result<Vec<QMatrix>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_qm(&text).with_context(|| format!("in {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let text = "# sample\nbase_q_idx = 40\ntcq=on\nist = false # no secondary\nchroma = 444\nseed = 0x10\n";
        let c = ConfigFile::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(c.base_q_idx, Some(40));
        assert_eq!((c.tcq, c.ist), (Some(true), Some(false)));
        assert_eq!(c.chroma, Some(ChromaFormat::Yuv444));
        assert_eq!(c.seed, Some(16));
        let mut cfg = CodecConfig::default();
        c.apply(&mut cfg).unwrap();
        assert_eq!(cfg.base_q_idx, 40);
        assert!(cfg.tools.tcq && !cfg.tools.ist && cfg.tools.ph);
    }

    #[test]
    fn reports_line_numbers() {
        let e = ConfigFile::parse("tcq = on\nbogus = 1\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = ConfigFile::parse("base_q_idx = many\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
    }

    #[test]
    fn qm_text() {
        let flat = vec!["40"; 16].join(" ");
        let m = parse_qm(&format!("Y 4 4 {flat}\n")).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].weight(3, 3), 40);
        assert!(parse_qm("Y 4 4 1 2 3").is_err());
        assert!(parse_qm(&format!("Y 16 16 {flat}")).is_err());
    }
}
