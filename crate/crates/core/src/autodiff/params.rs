use std::collections::HashMap;
use std::io::{Read, Write};

use super::tape::GradMap;
use super::tensor::Tensor;
use super::AutodiffError;

const CHECKPOINT_MAGIC: &[u8; 7] = b"RFCKPT1";

#[derive(Clone, Debug)]
struct Param {
    value: Tensor,
    m1: Tensor,
    m2: Tensor,
    step: u64,
}

impl Param {
    fn fresh(value: Tensor) -> Self {
        let (r, c) = (value.rows(), value.cols());
        Self { value, m1: Tensor::zeros(r, c), m2: Tensor::zeros(r, c), step: 0 }
    }
}

/// Named trainable tensors with their Adam moments, in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), AutodiffError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        self.index.insert(name.clone(), self.params.len());
        self.names.push(name);
        self.params.push(Param::fresh(value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    /// Replaces a parameter's value, keeping its optimizer state. The shape must match.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), AutodiffError> {
        let i = *self.index.get(name).ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        let p = &mut self.params[i];
        if p.value.shape() != value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "set",
                detail: format!("{name}: {:?} vs {:?}", p.value.shape(), value.shape()),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.params.iter().map(|p| &p.value))
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adam step count for `name`.
    pub fn step_of(&self, name: &str) -> Option<u64> {
        self.index.get(name).map(|&i| self.params[i].step)
    }

    /// Copies every parameter of `other` whose name is present here, checking shapes.
    /// Returns the number of parameters copied.
    pub fn load_matching(&mut self, other: &ParamStore) -> Result<usize, AutodiffError> {
        let mut copied = 0;
        for (name, src) in other.names.iter().zip(&other.params) {
            if let Some(&i) = self.index.get(name) {
                let dst = &mut self.params[i];
                if dst.value.shape() != src.value.shape() {
                    return Err(AutodiffError::Checkpoint(format!(
                        "parameter {name} has shape {:?}, checkpoint has {:?}",
                        dst.value.shape(),
                        src.value.shape()
                    )));
                }
                *dst = src.clone();
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Serializes values and Adam state.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), AutodiffError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for (name, p) in self.names.iter().zip(&self.params) {
            write_record(&mut w, name, &[p.value.rows(), p.value.cols()], p.value.data())?;
            write_record(&mut w, &format!("{name}.m1"), &[p.m1.rows(), p.m1.cols()], p.m1.data())?;
            write_record(&mut w, &format!("{name}.m2"), &[p.m2.rows(), p.m2.cols()], p.m2.data())?;
            write_record(&mut w, &format!("{name}.step"), &[1], &[p.step as f64])?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self, AutodiffError> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(AutodiffError::Checkpoint("bad header".into()));
        }
        let mut store = ParamStore::new();
        let mut state: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        while let Some((name, dims, data)) = read_record(&mut r)? {
            if name.ends_with(".m1") || name.ends_with(".m2") || name.ends_with(".step") {
                state.push((name, dims, data));
                continue;
            }
            let (rows, cols) = match dims.as_slice() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => return Err(AutodiffError::Checkpoint(format!("{name}: unsupported rank {}", dims.len()))),
            };
            store.insert(name, Tensor::new(rows, cols, data)?)?;
        }
        for (name, _, data) in state {
            let (base, kind) = name.rsplit_once('.').expect("suffix checked");
            let Some(&i) = store.index.get(base) else {
                return Err(AutodiffError::Checkpoint(format!("optimizer state {name} without parameter")));
            };
            let p = &mut store.params[i];
            match kind {
                "step" => p.step = data.first().copied().unwrap_or(0.0) as u64,
                _ => {
                    let t = Tensor::new(p.value.rows(), p.value.cols(), data)
                        .map_err(|_| AutodiffError::Checkpoint(format!("{name}: shape differs from parameter")))?;
                    if kind == "m1" {
                        p.m1 = t;
                    } else {
                        p.m2 = t;
                    }
                }
            }
        }
        Ok(store)
    }
}

fn write_record<W: Write>(w: &mut W, name: &str, dims: &[usize], data: &[f64]) -> Result<(), AutodiffError> {
    let bytes = name.as_bytes();
    let len = u16::try_from(bytes.len()).map_err(|_| AutodiffError::Checkpoint(format!("name too long: {name}")))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(bytes)?;
    w.write_all(&[dims.len() as u8])?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

type Record = (String, Vec<usize>, Vec<f64>);

fn read_record<R: Read>(r: &mut R) -> Result<Option<Record>, AutodiffError> {
    let mut len = [0u8; 2];
    match r.read(&mut len[..1])? {
        0 => return Ok(None),
        _ => r.read_exact(&mut len[1..])?,
    }
    let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| AutodiffError::Checkpoint("name is not UTF-8".into()))?;
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)?;
    let mut dims = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut d = [0u8; 4];
        r.read_exact(&mut d)?;
        dims.push(u32::from_le_bytes(d) as usize);
    }
    let count: usize = dims.iter().product();
    let mut data = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Ok(Some((name, dims, data)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
pub fn adam_step(store: &mut ParamStore, grads: &GradMap, cfg: &AdamConfig) -> Result<(), AutodiffError> {
    for name in &store.names {
        if !grads.contains_key(name) {
            return Err(AutodiffError::MissingGradient(name.clone()));
        }
    }
    for (name, p) in store.names.iter().zip(store.params.iter_mut()) {
        let g = &grads[name];
        if g.shape() != p.value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                detail: format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.value.shape()),
            });
        }
        p.step += 1;
        let t = p.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let value = p.value.data_mut();
        let m1 = p.m1.data_mut();
        let m2 = p.m2.data_mut();
        for (i, &gi) in g.data().iter().enumerate() {
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * gi;
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m1[i] / c1;
            let vhat = m2[i] / c2;
            value[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::row(values)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut s = store_with("w", &[1.0, -2.0]);
        let grads = GradMap::from([("w".to_string(), Tensor::zeros(1, 2))]);
        adam_step(&mut s, &grads, &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[1.0, -2.0]);
        assert_eq!(s.step_of("w"), Some(1));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store_with("w", &[0.5, 0.5]);
        let grads = GradMap::from([("w".to_string(), Tensor::row(&[3.0, -0.2]))]);
        adam_step(&mut s, &grads, &AdamConfig::with_lr(0.01)).unwrap();
        let w = s.get("w").unwrap();
        assert!((w.get(0, 0) - 0.49).abs() < 1e-9);
        assert!((w.get(0, 1) - 0.51).abs() < 1e-9);
    }

    #[test]
    fn missing_gradient_is_error() {
        let mut s = store_with("w", &[0.0]);
        let err = adam_step(&mut s, &GradMap::new(), &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, AutodiffError::MissingGradient(n) if n == "w"));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store_with("w", &[0.0]);
        assert!(s.insert("w", Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_keeps_adam_state() {
        let mut s = ParamStore::new();
        s.insert("displace.conv0.w", Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]])).unwrap();
        s.insert("bandwidth", Tensor::scalar(-2.8)).unwrap();
        let grads = GradMap::from([
            ("displace.conv0.w".to_string(), Tensor::filled(2, 2, 0.3)),
            ("bandwidth".to_string(), Tensor::scalar(1.0)),
        ]);
        adam_step(&mut s, &grads, &AdamConfig::default()).unwrap();

        let mut bytes = Vec::new();
        s.write_checkpoint(&mut bytes).unwrap();
        assert_eq!(&bytes[..7], b"RFCKPT1");
        let back = ParamStore::read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.get("bandwidth"), s.get("bandwidth"));
        assert_eq!(back.get("displace.conv0.w"), s.get("displace.conv0.w"));
        assert_eq!(back.step_of("bandwidth"), Some(1));

        let mut again = Vec::new();
        back.write_checkpoint(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn checkpoint_record_layout() {
        let s = store_with("ab", &[1.5]);
        let mut bytes = Vec::new();
        s.write_checkpoint(&mut bytes).unwrap();
        // magic, u16 name length, name, rank, two u32 dims, one f64
        assert_eq!(&bytes[7..9], &2u16.to_le_bytes());
        assert_eq!(&bytes[9..11], b"ab");
        assert_eq!(bytes[11], 2);
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1u32.to_le_bytes());
        assert_eq!(&bytes[20..28], &1.5f64.to_le_bytes());
    }

    #[test]
    fn truncated_checkpoint_fails() {
        let s = store_with("w", &[1.0, 2.0]);
        let mut bytes = Vec::new();
        s.write_checkpoint(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(ParamStore::read_checkpoint(bytes.as_slice()).is_err());
    }
}
