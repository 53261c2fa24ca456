use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use nalgebra::{Complex, DMatrix};
use nclab_core::export::round_sig9;
use serde::Serialize;
use serde_json::Value;

use crate::Failure;

/// Rounds every floating-point number in a JSON tree to 9 significant
/// digits. Integers are left alone.
pub fn rounded(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .map(round_sig9)
            .and_then(serde_json::Number::from_f64)
            .map_or(Value::Null, Value::Number),
        Value::Array(items) => Value::Array(items.into_iter().map(rounded).collect()),
        Value::Object(map) => {
            Value::Object(map.into_iter().map(|(k, v)| (k, rounded(v))).collect())
        }
        other => other,
    }
}

pub fn print_json<S: Serialize>(value: &S) -> Result<(), Failure> {
    let v = serde_json::to_value(value).map_err(|e| Failure::Invalid(e.to_string()))?;
    let text = serde_json::to_string_pretty(&rounded(v)).expect("JSON values always serialize");
    println!("{text}");
    Ok(())
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
pub struct ComplexOut {
    pub re: f64,
    pub im: f64,
}

impl From<&Complex<f64>> for ComplexOut {
    fn from(z: &Complex<f64>) -> Self {
        // avoid printing -0 for real eigenvalues
        ComplexOut {
            re: z.re,
            im: if z.im == 0.0 { 0.0 } else { z.im },
        }
    }
}

/// Runs `write` against the file at `path`, or standard output.
pub fn with_sink<F>(path: Option<&Path>, write: F) -> Result<(), Failure>
where
    F: FnOnce(&mut dyn Write) -> csv::Result<()>,
{
    let result = match path {
        Some(p) => {
            let file = File::create(p)
                .map_err(|e| Failure::Invalid(format!("cannot create {}: {e}", p.display())))?;
            let mut w = BufWriter::new(file);
            write(&mut w).and_then(|()| w.flush().map_err(csv::Error::from))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)
        }
    };
    result.map_err(|e| Failure::Invalid(format!("write failed: {e}")))
}
