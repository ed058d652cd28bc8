//! Reader and writer for the "Bundle Adjustment in the Large" text format.
//!
//! Layout: a header `m n q`, then `q` lines `camera point u v`, then nine
//! numbers per camera (rotation, translation, focal, k1, k2) and three per
//! point. Any whitespace separates tokens. The writer emits 17 significant
//! digits so `f64` values survive a round trip bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::problem::{BundleProblem, Camera, IngestOptions, IngestReport, Observation, Point3D};
use crate::Real;

/// Raw contents of a BAL file before ingestion.
#[derive(Debug, Clone)]
pub struct BalData<T: Real> {
    pub cameras: Vec<Camera<T>>,
    pub points: Vec<Point3D<T>>,
    pub observations: Vec<Observation<T>>,
}

impl<T: Real> BalData<T> {
    pub fn into_problem(self, options: IngestOptions) -> Result<(BundleProblem<T>, IngestReport)> {
        BundleProblem::new(self.cameras, self.points, self.observations, options)
    }
}

struct Tokens<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    current: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
            current: "".split_whitespace(),
            line: 0,
        }
    }

    fn next_token(&mut self) -> Result<&'a str> {
        loop {
            if let Some(tok) = self.current.next() {
                return Ok(tok);
            }
            match self.lines.next() {
                Some((i, l)) => {
                    self.line = i + 1;
                    self.current = l.split_whitespace();
                }
                None => {
                    return Err(Error::Parse {
                        line: self.line,
                        message: "unexpected end of file".into(),
                    })
                }
            }
        }
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let tok = self.next_token()?;
        tok.parse().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("expected {what}, found {tok:?}"),
        })
    }

    fn real<T: Real>(&mut self, what: &str) -> Result<T> {
        let tok = self.next_token()?;
        let v: f64 = tok.parse().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("expected {what}, found {tok:?}"),
        })?;
        Ok(T::lit(v))
    }

    fn vec3<T: Real>(&mut self, what: &str) -> Result<Vector3<T>> {
        Ok(Vector3::new(self.real(what)?, self.real(what)?, self.real(what)?))
    }

    fn finish(&mut self) -> Result<()> {
        match self.next_token() {
            Ok(tok) => Err(Error::Parse {
                line: self.line,
                message: format!("trailing data {tok:?}"),
            }),
            Err(_) => Ok(()),
        }
    }
}

/// Parses BAL text without validating the problem invariants.
pub fn parse<T: Real>(text: &str) -> Result<BalData<T>> {
    let mut t = Tokens::new(text);
    let m = t.usize("camera count")?;
    let n = t.usize("point count")?;
    let q = t.usize("observation count")?;
    let mut observations = Vec::with_capacity(q);
    for _ in 0..q {
        let camera = t.usize("camera index")?;
        let point = t.usize("point index")?;
        let u = t.real("pixel u")?;
        let v = t.real("pixel v")?;
        observations.push(Observation {
            camera,
            point,
            pixel: Vector2::new(u, v),
        });
    }
    let mut cameras = Vec::with_capacity(m);
    for _ in 0..m {
        let rotation = t.vec3("rotation")?;
        let translation = t.vec3("translation")?;
        let focal = t.real("focal")?;
        let k1 = t.real("k1")?;
        let k2 = t.real("k2")?;
        cameras.push(Camera::new(rotation, translation, focal, Vector2::new(k1, k2)));
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push(Point3D::new(t.vec3("point coordinate")?));
    }
    t.finish()?;
    Ok(BalData {
        cameras,
        points,
        observations,
    })
}

/// Parses and ingests BAL text.
pub fn read_str<T: Real>(text: &str, options: IngestOptions) -> Result<(BundleProblem<T>, IngestReport)> {
    parse(text)?.into_problem(options)
}

pub fn read_file<T: Real>(path: impl AsRef<Path>, options: IngestOptions) -> Result<(BundleProblem<T>, IngestReport)> {
    let text = std::fs::read_to_string(path)?;
    read_str(&text, options)
}

fn push_real<T: Real>(out: &mut String, v: T) {
    write!(out, "{:.16e}", v.as_f64()).unwrap();
}

/// Serializes a problem in BAL layout.
pub fn to_string<T: Real>(problem: &BundleProblem<T>) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{} {} {}",
        problem.num_cameras(),
        problem.num_points(),
        problem.num_observations()
    )
    .unwrap();
    for o in problem.observations() {
        write!(out, "{} {} ", o.camera, o.point).unwrap();
        push_real(&mut out, o.pixel.x);
        out.push(' ');
        push_real(&mut out, o.pixel.y);
        out.push('\n');
    }
    for c in problem.cameras() {
        let values = c
            .rotation
            .iter()
            .chain(c.translation.iter())
            .copied()
            .chain([c.focal, c.distortion.x, c.distortion.y]);
        for v in values {
            push_real(&mut out, v);
            out.push('\n');
        }
    }
    for p in problem.points() {
        for &v in p.position.iter() {
            push_real(&mut out, v);
            out.push('\n');
        }
    }
    out
}

pub fn write_file<T: Real>(problem: &BundleProblem<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_string(problem))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "2 2 4\n0 0 -1.5 2.0\n1 0 0.5 1.0\n0 1 3.0 -2.0\n1   1\t4.0 0.25\n\
        0.01\n0.02\n0.03\n0.1\n0.2\n-5\n500\n0\n0\n\
        -0.01 0.0 0.02 -0.5 0.0 -5 400 1e-3 0\n\
        0.1 0.2 0.3\n-0.1 0.0 0.5\n";

    #[test]
    fn parses_mixed_whitespace() {
        let d = parse::<f64>(TINY).unwrap();
        assert_eq!(d.cameras.len(), 2);
        assert_eq!(d.points.len(), 2);
        assert_eq!(d.observations.len(), 4);
        assert_eq!(d.cameras[1].focal, 400.0);
        assert_eq!(d.cameras[1].distortion.x, 1e-3);
        assert_eq!(d.observations[3].pixel, Vector2::new(4.0, 0.25));
        assert_eq!(d.points[1].position, Vector3::new(-0.1, 0.0, 0.5));
    }

    #[test]
    fn truncated_and_garbage_input_fail() {
        assert!(matches!(parse::<f64>("2 2 4\n0 0 1.0"), Err(Error::Parse { .. })));
        assert!(matches!(parse::<f64>("2 x 4"), Err(Error::Parse { line: 1, .. })));
        let extra = format!("{TINY} 7");
        assert!(matches!(parse::<f64>(&extra), Err(Error::Parse { .. })));
    }

    #[test]
    fn write_read_fixpoint() {
        let (p, _) = read_str::<f64>(TINY, IngestOptions::default()).unwrap();
        let s1 = to_string(&p);
        let (p2, _) = read_str::<f64>(&s1, IngestOptions::default()).unwrap();
        assert_eq!(s1, to_string(&p2));
        assert_eq!(p.params(), p2.params());
    }
}
