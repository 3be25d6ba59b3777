use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{BatchNorm, HiddenBlock, PredictorNet};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize, Default)]
struct BlockFile {
    bn_scale: Option<Vec<f64>>,
    bn_shift: Option<Vec<f64>>,
    running_mean: Option<Vec<f64>>,
    running_var: Option<Vec<f64>>,
    weight: Option<Vec<Vec<f64>>>,
    bias: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct OutputFile {
    weight: Option<Vec<f64>>,
    bias: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    layers: Option<Vec<usize>>,
    dropout: Option<f64>,
    blocks: Option<Vec<BlockFile>>,
    output: Option<OutputFile>,
    log_beta: Option<f64>,
}

fn need<T>(v: Option<T>, name: impl Into<String>) -> Result<T> {
    v.ok_or_else(|| Error::MissingParameter(name.into()))
}

fn vector(v: Option<Vec<f64>>, name: String, len: usize) -> Result<Array1<f64>> {
    let v = need(v, name.clone())?;
    if v.len() != len {
        return Err(Error::ShapeMismatch(format!(
            "{name} has length {}, expected {len}",
            v.len()
        )));
    }
    Ok(Array1::from(v))
}

fn matrix(v: Option<Vec<Vec<f64>>>, name: String, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let v = need(v, name.clone())?;
    if v.len() != rows || v.iter().any(|r| r.len() != cols) {
        let found = v.first().map_or(0, Vec::len);
        return Err(Error::ShapeMismatch(format!(
            "{name} is {}x{found}, expected {rows}x{cols}",
            v.len()
        )));
    }
    let flat: Vec<f64> = v.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((rows, cols), flat).expect("checked shape"))
}

/// Writes the network as JSON; floats use shortest round-trip decimal form.
pub fn save_weights(net: &PredictorNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let doc = WeightsFile {
        layers: Some(net.layers.clone()),
        dropout: Some(net.dropout),
        blocks: Some(
            net.blocks
                .iter()
                .map(|b| BlockFile {
                    bn_scale: Some(b.norm.scale.to_vec()),
                    bn_shift: Some(b.norm.shift.to_vec()),
                    running_mean: Some(b.norm.running_mean.to_vec()),
                    running_var: Some(b.norm.running_var.to_vec()),
                    weight: Some(b.weight.outer_iter().map(|r| r.to_vec()).collect()),
                    bias: Some(b.bias.to_vec()),
                })
                .collect(),
        ),
        output: Some(OutputFile {
            weight: Some(net.out_weight.row(0).to_vec()),
            bias: Some(net.out_bias),
        }),
        log_beta: Some(net.log_beta),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &doc).map_err(|e| Error::Numeric(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<PredictorNet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let doc: WeightsFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
    from_doc(doc)
}

/// Like [`load_weights`] but also requires the declared layer widths.
pub fn load_weights_expecting(path: impl AsRef<Path>, layers: &[usize]) -> Result<PredictorNet> {
    let net = load_weights(path)?;
    if net.layers() != layers {
        return Err(Error::ShapeMismatch(format!(
            "architecture {:?}, expected {layers:?}",
            net.layers()
        )));
    }
    Ok(net)
}

fn from_doc(doc: WeightsFile) -> Result<PredictorNet> {
    let layers = need(doc.layers, "layers")?;
    let dropout = need(doc.dropout, "dropout")?;
    let mut net = PredictorNet::zeros(&layers, dropout)?;
    let blocks = need(doc.blocks, "blocks")?;
    if blocks.len() != net.blocks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} hidden blocks, expected {}",
            blocks.len(),
            net.blocks.len()
        )));
    }
    for (i, (b, w)) in blocks.into_iter().zip(layers.windows(2)).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let norm = BatchNorm {
            scale: vector(b.bn_scale, format!("blocks[{i}].bn_scale"), fan_in)?,
            shift: vector(b.bn_shift, format!("blocks[{i}].bn_shift"), fan_in)?,
            running_mean: vector(b.running_mean, format!("blocks[{i}].running_mean"), fan_in)?,
            running_var: vector(b.running_var, format!("blocks[{i}].running_var"), fan_in)?,
        };
        net.blocks[i] = HiddenBlock {
            norm,
            weight: matrix(b.weight, format!("blocks[{i}].weight"), fan_out, fan_in)?,
            bias: vector(b.bias, format!("blocks[{i}].bias"), fan_out)?,
        };
    }
    let output = need(doc.output, "output")?;
    let last = layers[layers.len() - 2];
    let w = vector(output.weight, "output.weight".into(), last)?;
    net.out_weight = w.insert_axis(ndarray::Axis(0));
    net.out_bias = need(output.bias, "output.bias")?;
    net.log_beta = need(doc.log_beta, "log_beta")?;
    if !net.is_finite() {
        return Err(Error::NonFinite("predictor weights".into()));
    }
    Ok(net)
}
