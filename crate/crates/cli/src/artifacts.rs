//! Output files: weights, PGM images and CSV documents, each carrying the
//! effective run configuration.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use csnas::data::{load_dataset, Dataset};
use csnas::gradcore::Real;
use csnas::model::{Genotype, Network, NetworkConfig};

use crate::error::CliError;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"CSNASW1\0";

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    let wrap = |source| CliError::Write {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(wrap)?;
    }
    std::fs::write(path, bytes).map_err(wrap)
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset, CliError> {
    if !path.is_file() {
        return Err(CliError::input(path, "dataset not found"));
    }
    load_dataset(path).map_err(|e| CliError::input(path, e))
}

pub fn read_genotype_file(path: &Path) -> Result<Genotype, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    Genotype::from_json(&text).map_err(|e| CliError::input(path, e))
}

/// Genotype document with the run configuration under `config`.
pub fn genotype_document(genotype: &Genotype, echo: &serde_json::Value) -> String {
    let mut doc = serde_json::to_value(genotype).expect("genotype serializes");
    doc.as_object_mut()
        .expect("genotype is an object")
        .insert("config".into(), echo.clone());
    let mut text = serde_json::to_string_pretty(&doc).expect("json serializes");
    text.push('\n');
    text
}

pub fn csv_with_echo(echo: &str, body: &str) -> String {
    format!("# config: {echo}\n{body}")
}

/// Binary greyscale image of `values`, scaled so the maximum maps to 255.
pub fn pgm(values: &[f64], h: usize, w: usize, echo: &str) -> Vec<u8> {
    let peak = values.iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n# config: {echo}\n{w} {h}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if peak > 0.0 {
            (v / peak * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

/// Element types that can be stored in a weights file.
pub trait Wire: Real {
    fn put(self, out: &mut Vec<u8>);
    fn take(bytes: &[u8]) -> Self;
}

impl Wire for f32 {
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn take(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Wire for f64 {
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn take(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsHeader {
    network: NetworkConfig,
    genotype: Option<Genotype>,
    config: serde_json::Value,
}

/// Layout: magic, u32 element size, u64 header length, JSON header,
/// u64 scalar count, then every parameter in store order (little endian).
pub fn encode_weights<T: Wire>(net: &Network<T>, echo: &serde_json::Value) -> Vec<u8> {
    let header = serde_json::to_vec(&WeightsHeader {
        network: net.config().clone(),
        genotype: net.genotype().cloned(),
        config: echo.clone(),
    })
    .expect("header serializes");
    let mut out = WEIGHTS_MAGIC.to_vec();
    out.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let total: usize = net.store().iter().map(|(_, p)| p.value.len()).sum();
    out.extend_from_slice(&(total as u64).to_le_bytes());
    for (_, p) in net.store().iter() {
        for &v in p.value.data() {
            v.put(&mut out);
        }
    }
    out
}

pub enum LoadedNetwork {
    F32(Network<f32>),
    F64(Network<f64>),
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CliError> {
        if self.bytes.len() - self.pos < n {
            return Err(CliError::input(
                self.path,
                format!("truncated {what} at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn fill<T: Wire>(
    header: WeightsHeader,
    cur: &mut Cursor<'_>,
) -> Result<Network<T>, CliError> {
    let path = cur.path;
    let mut net = Network::<T>::new(header.network, header.genotype, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| CliError::input(path, e))?;
    let count = cur.u64("scalar count")? as usize;
    let expected: usize = net.store().iter().map(|(_, p)| p.value.len()).sum();
    if count != expected {
        return Err(CliError::input(
            path,
            format!("file holds {count} scalars but the network needs {expected}"),
        ));
    }
    let ids: Vec<usize> = net.store().iter().map(|(id, _)| id).collect();
    for id in ids {
        let at = cur.pos;
        let n = net.store().get(id).len();
        let raw = cur.take(n * T::BYTES, "parameters")?;
        let values = net.store_mut().get_mut(id).data_mut();
        for (k, chunk) in raw.chunks_exact(T::BYTES).enumerate() {
            let v = T::take(chunk);
            if !v.is_finite() {
                return Err(CliError::input(
                    path,
                    format!("non-finite weight at byte {}", at + k * T::BYTES),
                ));
            }
            values[k] = v;
        }
    }
    if cur.pos != cur.bytes.len() {
        return Err(CliError::input(
            path,
            format!("trailing bytes at byte {}", cur.pos),
        ));
    }
    Ok(net)
}

pub fn decode_weights(bytes: &[u8], path: &Path) -> Result<LoadedNetwork, CliError> {
    let mut cur = Cursor { bytes, pos: 0, path };
    if cur.take(8, "magic")? != WEIGHTS_MAGIC {
        return Err(CliError::input(path, "not a weights file (bad magic at byte 0)"));
    }
    let size = u32::from_le_bytes(cur.take(4, "precision")?.try_into().expect("4 bytes"));
    let len = cur.u64("header length")? as usize;
    let start = cur.pos;
    let header: WeightsHeader = serde_json::from_slice(cur.take(len, "header")?)
        .map_err(|e| CliError::input(path, format!("header at byte {start}: {e}")))?;
    match size {
        4 => Ok(LoadedNetwork::F32(fill(header, &mut cur)?)),
        8 => Ok(LoadedNetwork::F64(fill(header, &mut cur)?)),
        other => Err(CliError::input(
            path,
            format!("unknown element size {other} at byte 8"),
        )),
    }
}

pub fn read_weights_file(path: &Path) -> Result<LoadedNetwork, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::input(path, e))?;
    decode_weights(&bytes, path)
}
