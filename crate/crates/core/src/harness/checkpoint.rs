use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ParamSet;

const MAGIC: &str = "tdmpc-lab checkpoint v1";

/// A text manifest of `key value` entries and array declarations, followed
/// by the arrays as little-endian `f64` in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn put_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn put_array(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push((name.into(), shape, data));
    }

    /// Every tensor of `set` as `<prefix>.<index>`.
    pub fn put_params(&mut self, prefix: &str, set: &ParamSet) {
        for (i, t) in set.tensors().iter().enumerate() {
            self.put_array(format!("{prefix}.{i}"), t.shape().to_vec(), t.data().to_vec());
        }
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()).ok_or_else(|| Error::config(format!("checkpoint has no '{key}' entry")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta(key)?;
        v.parse().map_err(|_| Error::config(format!("checkpoint entry {key} = '{v}' is malformed")))
    }

    pub fn array(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::config(format!("checkpoint has no array '{name}'")))
    }

    /// Loads `<prefix>.<index>` arrays into `set`, validating shapes.
    pub fn load_params(&self, prefix: &str, set: &mut ParamSet) -> Result<()> {
        for (i, t) in set.tensors_mut().iter_mut().enumerate() {
            let name = format!("{prefix}.{i}");
            let (shape, data) = self.array(&name)?;
            if shape != t.shape() {
                return Err(Error::config(format!("checkpoint array {name} has shape {shape:?}, model expects {:?}", t.shape())));
            }
            t.data_mut().copy_from_slice(data);
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            writeln!(w, "{MAGIC}")?;
            for (k, v) in &self.meta {
                if k.contains(char::is_whitespace) || v.contains('\n') {
                    return Err(Error::contract(format!("checkpoint entry '{k}' cannot be stored as one line")));
                }
                writeln!(w, "meta {k} {v}")?;
            }
            for (name, shape, _) in &self.arrays {
                let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
                writeln!(w, "array {name} {}", if dims.is_empty() { "scalar".to_string() } else { dims.join("x") })?;
            }
            writeln!(w, "end")?;
            for (_, _, data) in &self.arrays {
                for x in data {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            w.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut line = String::new();
        let mut n = 0;
        let mut next_line = |r: &mut BufReader<File>, line: &mut String| -> Result<usize> {
            line.clear();
            r.read_line(line)?;
            n += 1;
            Ok(n)
        };
        let ln = next_line(&mut r, &mut line)?;
        if line.trim_end() != MAGIC {
            return Err(Error::Parse { line: ln, msg: format!("not a checkpoint (expected '{MAGIC}')") });
        }
        let mut ck = Checkpoint::default();
        let mut decls: Vec<(String, Vec<usize>)> = Vec::new();
        loop {
            let ln = next_line(&mut r, &mut line)?;
            let l = line.trim_end_matches('\n');
            if l.is_empty() && line.is_empty() {
                return Err(Error::Parse { line: ln, msg: "manifest ends without 'end'".into() });
            }
            if l == "end" {
                break;
            }
            let mut parts = l.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), v) => ck.meta.push((k.to_string(), v.unwrap_or("").to_string())),
                (Some("array"), Some(name), Some(shape)) => {
                    let dims = if shape == "scalar" {
                        Vec::new()
                    } else {
                        shape
                            .split('x')
                            .map(|d| d.parse::<usize>().map_err(|_| Error::Parse { line: ln, msg: format!("bad shape '{shape}'") }))
                            .collect::<Result<Vec<_>>>()?
                    };
                    decls.push((name.to_string(), dims));
                }
                _ => return Err(Error::Parse { line: ln, msg: format!("unrecognized manifest line '{l}'") }),
            }
        }
        for (name, shape) in decls {
            let len: usize = shape.iter().product();
            let mut bytes = vec![0u8; len * 8];
            r.read_exact(&mut bytes).map_err(|_| Error::config(format!("checkpoint truncated inside array '{name}'")))?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
            ck.arrays.push((name, shape, data));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::config(format!("{} trailing bytes after the declared arrays", rest.len())));
        }
        Ok(ck)
    }
}
