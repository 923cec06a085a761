use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attributes::{sample_attributes, Attributes, Category};
use super::caption::{Caption, Captioner};
use super::parse::CaptionParser;
use super::proto::{encode_proto, ProtoVector, PROTO_DIM};
use super::render::render_image;
use super::{ShapeConfig, ShapesError};
use crate::manifest::{Manifest, ManifestError};
use crate::seeds::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Training records.
    pub k: usize,
    /// Held-out records, indexed after the training ones.
    pub n_test: usize,
    pub seed: u64,
    #[serde(default)]
    pub shape: ShapeConfig,
    #[serde(default)]
    pub images: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { k: 10_000, n_test: 1_000, seed: 0, shape: ShapeConfig::default(), images: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub index: u64,
    pub attrs: Attributes,
    pub proto: ProtoVector,
    pub caption: Caption,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<Record>,
    pub test: Vec<Record>,
}

fn make_record(index: u64, seed: u64, cap: &Captioner) -> Record {
    let attrs = sample_attributes(&mut rng_for(seed, "attributes", index), &cap.config).expect("config validated");
    let caption = cap.generate(&attrs, &mut rng_for(seed, "caption", index));
    Record { index, attrs, proto: encode_proto(&attrs, &cap.config), caption }
}

impl Dataset {
    /// Generates every record in memory. Record `i` depends only on
    /// `(seed, i)`.
    pub fn generate(config: &DatasetConfig) -> Result<Self, ShapesError> {
        if config.k == 0 {
            return Err(ShapesError::Config("dataset needs k >= 1".into()));
        }
        config.shape.validate()?;
        let cap = Captioner::builtin(config.shape);
        let gen = |range: std::ops::Range<u64>| -> Vec<Record> {
            range.into_par_iter().map(|i| make_record(i, config.seed, &cap)).collect()
        };
        let k = config.k as u64;
        Ok(Self { config: config.clone(), train: gen(0..k), test: gen(k..k + config.n_test as u64) })
    }

    pub fn split(&self, test: bool) -> &[Record] {
        if test {
            &self.test
        } else {
            &self.train
        }
    }
}

fn attrs_csv(records: &[Record]) -> String {
    let mut s = String::from("index,category,x,y,size,rotation,h,s,l,r,g,b\n");
    for r in records {
        let a = &r.attrs;
        let [red, green, blue] = a.rgb_bytes();
        writeln!(
            s,
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{}",
            r.index,
            a.category.name(),
            a.x,
            a.y,
            a.size,
            a.rotation,
            a.hsl[0],
            a.hsl[1],
            a.hsl[2],
            red,
            green,
            blue
        )
        .expect("writing to a String");
    }
    s
}

fn proto_bytes(records: &[Record]) -> Vec<u8> {
    records.iter().flat_map(|r| r.proto.0).flat_map(f64::to_le_bytes).collect()
}

fn captions_txt(records: &[Record]) -> String {
    records.iter().map(|r| format!("{}\n", r.caption.text)).collect()
}

fn manifest_err(e: ManifestError) -> ShapesError {
    match e {
        ManifestError::Io { path, source } => ShapesError::Io { path: path.display().to_string(), source },
        other => ShapesError::Format { path: String::new(), message: other.to_string() },
    }
}

/// Writes `train/` and `test/` record files plus `manifest.json` under `out`.
pub fn build_dataset(config: &DatasetConfig, out: &Path) -> Result<Manifest, ShapesError> {
    let ds = Dataset::generate(config)?;
    write_dataset(&ds, out)
}

pub fn write_dataset(ds: &Dataset, out: &Path) -> Result<Manifest, ShapesError> {
    let mut m = Manifest::new("gen-data", ds.config.seed, &ds.config);
    for (name, records) in [("train", &ds.train), ("test", &ds.test)] {
        m.write_file(out, &format!("{name}/attrs.csv"), attrs_csv(records).as_bytes()).map_err(manifest_err)?;
        m.write_file(out, &format!("{name}/proto.f64"), &proto_bytes(records)).map_err(manifest_err)?;
        m.write_file(out, &format!("{name}/captions.txt"), captions_txt(records).as_bytes()).map_err(manifest_err)?;
        if ds.config.images {
            for r in records.iter() {
                let mut ppm = Vec::new();
                render_image(&r.attrs, ds.config.shape.image_size).write_ppm(&mut ppm).expect("in-memory write");
                m.write_file(out, &format!("{name}/img/{:06}.ppm", r.index), &ppm).map_err(manifest_err)?;
            }
        }
    }
    m.save(out).map_err(manifest_err)?;
    Ok(m)
}

fn parse_attrs_line(line: &str, path: &str) -> Result<(u64, Attributes), ShapesError> {
    let bad = |message: String| ShapesError::Format { path: path.to_string(), message };
    let cols: Vec<&str> = line.split(',').collect();
    if cols.len() != 12 {
        return Err(bad(format!("expected 12 columns in {line:?}")));
    }
    let num = |i: usize| cols[i].parse::<f64>().map_err(|_| bad(format!("column {i} of {line:?} is not a number")));
    let index = cols[0].parse().map_err(|_| bad(format!("bad index in {line:?}")))?;
    let category = Category::from_name(cols[1]).ok_or_else(|| bad(format!("unknown category {:?}", cols[1])))?;
    Ok((
        index,
        Attributes {
            category,
            x: num(2)?,
            y: num(3)?,
            size: num(4)?,
            rotation: num(5)?,
            hsl: [num(6)?, num(7)?, num(8)?],
        },
    ))
}

fn load_split(dir: &Path, name: &str, parser: &CaptionParser) -> Result<Vec<Record>, ShapesError> {
    let read = |file: &str| -> Result<Vec<u8>, ShapesError> {
        let p = dir.join(name).join(file);
        fs::read(&p).map_err(|e| ShapesError::io(&p, e))
    };
    let attrs_path = format!("{name}/attrs.csv");
    let attrs_text = String::from_utf8(read("attrs.csv")?)
        .map_err(|_| ShapesError::Format { path: attrs_path.clone(), message: "not UTF-8".into() })?;
    let proto = read("proto.f64")?;
    let captions = String::from_utf8(read("captions.txt")?)
        .map_err(|_| ShapesError::Format { path: format!("{name}/captions.txt"), message: "not UTF-8".into() })?;
    let lines: Vec<&str> = attrs_text.lines().skip(1).collect();
    let texts: Vec<&str> = captions.lines().collect();
    if texts.len() != lines.len() || proto.len() != lines.len() * PROTO_DIM * 8 {
        return Err(ShapesError::Format {
            path: name.to_string(),
            message: "record counts disagree between files".into(),
        });
    }
    let mut out = Vec::with_capacity(lines.len());
    for (i, (line, text)) in lines.iter().zip(&texts).enumerate() {
        let (index, attrs) = parse_attrs_line(line, &attrs_path)?;
        let block = &proto[i * PROTO_DIM * 8..(i + 1) * PROTO_DIM * 8];
        let v: Vec<f64> =
            block.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        let (bins, trace) = parser.parse(text)?;
        out.push(Record {
            index,
            attrs,
            proto: ProtoVector::from_slice(&v)?,
            caption: Caption { text: text.to_string(), trace, bins },
        });
    }
    Ok(out)
}

/// Reads a dataset directory after verifying its manifest. Captions are
/// re-parsed, so each record carries the text-relevant trace only.
pub fn load_dataset(dir: &Path) -> Result<Dataset, ShapesError> {
    let m = Manifest::open(dir).map_err(manifest_err)?;
    let config: DatasetConfig = serde_json::from_value(m.config.clone())
        .map_err(|e| ShapesError::Format { path: "manifest.json".into(), message: e.to_string() })?;
    let parser = CaptionParser::new(&Captioner::builtin(config.shape))?;
    let train = load_split(dir, "train", &parser)?;
    let test = load_split(dir, "test", &parser)?;
    Ok(Dataset { config, train, test })
}
