use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AtomLabel, Vec3, WrappedFrame, WrappedTrajectory};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 10] = [
    "frame", "mol", "atom", "role", "x", "y", "z", "bx", "by", "bz",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajFormat {
    Csv,
    Jsonl,
}

impl FromStr for TrajFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TrajFormat::Csv),
            "jsonl" => Ok(TrajFormat::Jsonl),
            _ => Err(Error::invalid(format!("unknown trajectory format {s:?}"))),
        }
    }
}

/// One JSON-lines record.
#[derive(Debug, Serialize, Deserialize)]
struct JsonFrame {
    t: i64,
    #[serde(rename = "box")]
    box_lengths: Vec3,
    mols: Vec<JsonAtom>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonAtom {
    id: serde_json::Value,
    role: String,
    xyz: Vec3,
}

/// Reads a trajectory file; `dt` is the frame interval in ps (the formats
/// carry frame indices only).
pub fn load_trajectory(path: &Path, format: TrajFormat, dt: f64) -> Result<WrappedTrajectory> {
    let (frames, labels) = match format {
        TrajFormat::Csv => read_csv(path)?,
        TrajFormat::Jsonl => read_jsonl(path)?,
    };
    WrappedTrajectory::new(frames, dt, labels)
}

struct FrameBuilder {
    frames: Vec<WrappedFrame>,
    labels: Vec<AtomLabel>,
    last_index: Option<i64>,
}

impl FrameBuilder {
    fn new() -> Self {
        Self {
            frames: Vec::new(),
            labels: Vec::new(),
            last_index: None,
        }
    }

    fn close_frame(&mut self) -> Result<()> {
        let t = self.frames.len() - 1;
        let found = self.frames[t].positions.len();
        if t == 0 {
            return Ok(());
        }
        if found != self.labels.len() {
            return Err(Error::AtomCount {
                frame: t,
                expected: self.labels.len(),
                found,
            });
        }
        Ok(())
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_csv(path: &Path) -> Result<(Vec<WrappedFrame>, Vec<AtomLabel>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(path, 1, format!("{other:?}")),
        })?;
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(parse_err(
            path,
            1,
            format!("expected header {}", CSV_HEADER.join(",")),
        ));
    }

    let mut b = FrameBuilder::new();
    let mut slot = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| {
                parse_err(
                    path,
                    line,
                    format!("bad number {:?} in column {}", &rec[i], CSV_HEADER[i]),
                )
            })
        };
        let frame: i64 = rec[0]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad frame index {:?}", &rec[0])))?;
        let pos = [num(4)?, num(5)?, num(6)?];
        let bx = [num(7)?, num(8)?, num(9)?];
        let label = AtomLabel {
            mol: rec[1].to_string(),
            atom: rec[2].to_string(),
            role: rec[3].to_string(),
        };

        if b.last_index != Some(frame) {
            if let Some(prev) = b.last_index {
                if frame <= prev {
                    return Err(parse_err(
                        path,
                        line,
                        format!("frame {frame} does not increase (previous {prev})"),
                    ));
                }
                b.close_frame()?;
            }
            if bx.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::NonPositiveBox(bx, b.frames.len()));
            }
            b.frames.push(WrappedFrame {
                positions: Vec::new(),
                box_lengths: bx,
            });
            b.last_index = Some(frame);
            slot = 0;
        }
        let t = b.frames.len() - 1;
        if b.frames[t].box_lengths != bx {
            return Err(parse_err(
                path,
                line,
                "box differs between rows of one frame",
            ));
        }
        if t == 0 {
            b.labels.push(label);
        } else {
            match b.labels.get(slot) {
                None => {
                    return Err(Error::AtomCount {
                        frame: t,
                        expected: b.labels.len(),
                        found: slot + 1,
                    })
                }
                Some(l) if *l != label => {
                    return Err(parse_err(
                        path,
                        line,
                        format!("atom label {label:?} does not match first frame {l:?}"),
                    ))
                }
                _ => {}
            }
        }
        b.frames[t].positions.push(pos);
        slot += 1;
    }
    if b.frames.is_empty() {
        return Err(parse_err(path, 2, "no frames"));
    }
    b.close_frame()?;
    Ok((b.frames, b.labels))
}

fn read_jsonl(path: &Path) -> Result<(Vec<WrappedFrame>, Vec<AtomLabel>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut b = FrameBuilder::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonFrame =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        if let Some(prev) = b.last_index {
            if rec.t <= prev {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("frame {} does not increase (previous {prev})", rec.t),
                ));
            }
        }
        if rec.box_lengths.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::NonPositiveBox(rec.box_lengths, b.frames.len()));
        }
        let labels: Vec<AtomLabel> = rec
            .mols
            .iter()
            .map(|a| AtomLabel {
                mol: match &a.id {
                    serde_json::Value::String(s) => s.clone(),
                    v => v.to_string(),
                },
                atom: a.role.clone(),
                role: a.role.clone(),
            })
            .collect();
        if b.frames.is_empty() {
            b.labels = labels;
        } else if labels.len() != b.labels.len() {
            return Err(Error::AtomCount {
                frame: b.frames.len(),
                expected: b.labels.len(),
                found: labels.len(),
            });
        } else if labels != b.labels {
            return Err(parse_err(
                path,
                lineno,
                "atom labels do not match first frame",
            ));
        }
        b.frames.push(WrappedFrame {
            positions: rec.mols.iter().map(|a| a.xyz).collect(),
            box_lengths: rec.box_lengths,
        });
        b.last_index = Some(rec.t);
    }
    if b.frames.is_empty() {
        return Err(parse_err(path, 1, "no frames"));
    }
    Ok((b.frames, b.labels))
}

/// Writes `w` in the given format. Floats use Rust's shortest round-trip
/// representation, so a write/load cycle is lossless.
pub fn write_trajectory(path: &Path, w: &WrappedTrajectory, format: TrajFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        TrajFormat::Csv => {
            writeln!(out, "{}", CSV_HEADER.join(",")).map_err(io)?;
            for (t, f) in w.frames.iter().enumerate() {
                let b = f.box_lengths;
                for (p, l) in f.positions.iter().zip(&w.labels) {
                    writeln!(
                        out,
                        "{t},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
                        l.mol, l.atom, l.role, p[0], p[1], p[2], b[0], b[1], b[2]
                    )
                    .map_err(io)?;
                }
            }
        }
        TrajFormat::Jsonl => {
            for (t, f) in w.frames.iter().enumerate() {
                let rec = JsonFrame {
                    t: t as i64,
                    box_lengths: f.box_lengths,
                    mols: f
                        .positions
                        .iter()
                        .zip(&w.labels)
                        .map(|(p, l)| JsonAtom {
                            id: serde_json::Value::String(l.mol.clone()),
                            role: l.role.clone(),
                            xyz: *p,
                        })
                        .collect(),
                };
                serde_json::to_writer(&mut out, &rec)?;
                writeln!(out).map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn tmp(content: &str, name: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        fs::write(&p, content).unwrap();
        (dir, p)
    }

    #[test]
    fn two_frame_csv() {
        let (_d, p) = tmp(
            "frame,mol,atom,role,x,y,z,bx,by,bz\n0,1,OW,O,1,2,3,10,10,10\n1,1,OW,O,1.5,2,13,10,10,10\n",
            "t.csv",
        );
        let w = load_trajectory(&p, TrajFormat::Csv, 0.5).unwrap();
        assert_eq!(w.n_frames(), 2);
        assert_eq!(w.frames[1].positions[0], [1.5, 2.0, 3.0]);
        assert_eq!(w.labels[0].role, "O");
    }

    #[test]
    fn csv_errors() {
        let (_d, p) = tmp(
            "frame,mol,atom,role,x,y,z,bx,by,bz\n0,1,OW,O,1,2,3,10,0,10\n1,1,OW,O,1,2,3,10,10,10\n",
            "t.csv",
        );
        let e = load_trajectory(&p, TrajFormat::Csv, 0.5).unwrap_err();
        assert!(e.to_string().contains("non-positive box"), "{e}");

        let (_d, p) = tmp(
            "frame,mol,atom,role,x,y,z,bx,by,bz\n0,1,OW,O,1,2,3,10,10,10\n1,1,OW,O,1,zz,3,10,10,10\n",
            "t.csv",
        );
        let e = load_trajectory(&p, TrajFormat::Csv, 0.5).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");

        let (_d, p) = tmp(
            "frame,mol,atom,role,x,y,z,bx,by,bz\n0,1,OW,O,1,2,3,10,10,10\n0,2,OW,O,1,2,3,10,10,10\n1,1,OW,O,1,2,3,10,10,10\n",
            "t.csv",
        );
        assert!(matches!(
            load_trajectory(&p, TrajFormat::Csv, 0.5),
            Err(Error::AtomCount { .. })
        ));

        let (_d, p) = tmp(
            "frame,mol,atom,role,x,y,z,bx,by,bz\n1,1,OW,O,1,2,3,10,10,10\n0,1,OW,O,1,2,3,10,10,10\n",
            "t.csv",
        );
        assert!(load_trajectory(&p, TrajFormat::Csv, 0.5).is_err());
    }

    #[test]
    fn jsonl_reads_and_round_trips() {
        let (_d, p) = tmp(
            "{\"t\":0,\"box\":[10,10,10],\"mols\":[{\"id\":1,\"role\":\"O\",\"xyz\":[1,2,3]}]}\n\
             {\"t\":1,\"box\":[10,10,10],\"mols\":[{\"id\":1,\"role\":\"O\",\"xyz\":[1,2,11]}]}\n",
            "t.jsonl",
        );
        let w = load_trajectory(&p, TrajFormat::Jsonl, 1.0).unwrap();
        assert_eq!(w.frames[1].positions[0], [1.0, 2.0, 1.0]);
        assert_eq!(w.labels[0].mol, "1");

        let out = p.with_extension("out.jsonl");
        write_trajectory(&out, &w, TrajFormat::Jsonl).unwrap();
        let back = load_trajectory(&out, TrajFormat::Jsonl, 1.0).unwrap();
        assert_eq!(back, w);
    }
}
