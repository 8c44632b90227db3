//! File formats: netpbm rasters, ASCII PLY scans, trajectory CSV and key=value files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{CloudPoint, IntensityCloud, Pose6};
use crate::local_map::TrajectorySample;
use crate::raster::{GrayImage, Raster};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Splits a netpbm header into `count` tokens and returns them with the payload offset.
fn netpbm_header(bytes: &[u8], count: usize, ctx: &str) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::parse(ctx, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the payload
    Ok((tokens, i + 1))
}

enum Pgm {
    Gray8(GrayImage),
    Gray16(Raster<u16>),
}

fn decode_pgm(bytes: &[u8], ctx: &str) -> Result<Pgm> {
    let (tok, offset) = netpbm_header(bytes, 4, ctx)?;
    if tok[0] != "P5" {
        return Err(Error::parse(ctx, format!("expected P5 magic, found {}", tok[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(ctx, format!("bad header number {s:?}")))
    };
    let (w, h, maxval) = (num(&tok[1])?, num(&tok[2])?, num(&tok[3])?);
    let payload = &bytes[offset.min(bytes.len())..];
    if maxval < 256 {
        if payload.len() < w * h {
            return Err(Error::parse(ctx, "truncated 8-bit payload"));
        }
        Ok(Pgm::Gray8(Raster::from_vec(w, h, payload[..w * h].to_vec())))
    } else if maxval < 65536 {
        if payload.len() < 2 * w * h {
            return Err(Error::parse(ctx, "truncated 16-bit payload"));
        }
        let data = payload[..2 * w * h]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        Ok(Pgm::Gray16(Raster::from_vec(w, h, data)))
    } else {
        Err(Error::parse(ctx, format!("unsupported maxval {maxval}")))
    }
}

/// Reads an 8-bit binary PGM (P5).
pub fn read_pgm8(path: &Path) -> Result<GrayImage> {
    let ctx = path.display().to_string();
    match decode_pgm(&read_bytes(path)?, &ctx)? {
        Pgm::Gray8(img) => Ok(img),
        Pgm::Gray16(_) => Err(Error::parse(ctx, "expected 8-bit PGM")),
    }
}

/// Reads a 16-bit big-endian binary PGM (P5).
pub fn read_pgm16(path: &Path) -> Result<Raster<u16>> {
    let ctx = path.display().to_string();
    match decode_pgm(&read_bytes(path)?, &ctx)? {
        Pgm::Gray16(img) => Ok(img),
        Pgm::Gray8(_) => Err(Error::parse(ctx, "expected 16-bit PGM")),
    }
}

pub fn encode_pgm8(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn encode_pgm16(img: &Raster<u16>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for &v in img.data() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn write_pgm8(path: &Path, img: &GrayImage) -> Result<()> {
    write_bytes(path, &encode_pgm8(img))
}

pub fn write_pgm16(path: &Path, img: &Raster<u16>) -> Result<()> {
    write_bytes(path, &encode_pgm16(img))
}

/// Writes a binary PPM (P6) from packed RGB triples.
pub fn write_ppm(path: &Path, img: &Raster<[u8; 3]>) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    for px in img.data() {
        out.extend_from_slice(px);
    }
    write_bytes(path, &out)
}

pub fn read_ppm(path: &Path) -> Result<Raster<[u8; 3]>> {
    let ctx = path.display().to_string();
    let bytes = read_bytes(path)?;
    let (tok, offset) = netpbm_header(&bytes, 4, &ctx)?;
    if tok[0] != "P6" || tok[3] != "255" {
        return Err(Error::parse(ctx, "expected 8-bit P6"));
    }
    let w: usize = tok[1].parse().map_err(|_| Error::parse(&ctx, "bad width"))?;
    let h: usize = tok[2].parse().map_err(|_| Error::parse(&ctx, "bad height"))?;
    let payload = &bytes[offset..];
    if payload.len() < 3 * w * h {
        return Err(Error::parse(ctx, "truncated payload"));
    }
    let data = payload[..3 * w * h]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok(Raster::from_vec(w, h, data))
}

/// Serializes a cloud as ASCII PLY with `x y z intensity` vertices.
pub fn encode_ply(cloud: &IntensityCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 32 + 160);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str(
        "property float x\nproperty float y\nproperty float z\nproperty uchar intensity\nend_header\n",
    );
    for p in &cloud.points {
        let _ = writeln!(
            s,
            "{:.5} {:.5} {:.5} {}",
            p.position.x, p.position.y, p.position.z, p.intensity
        );
    }
    s
}

pub fn write_ply(path: &Path, cloud: &IntensityCloud) -> Result<()> {
    write_bytes(path, encode_ply(cloud).as_bytes())
}

/// Parses an ASCII PLY; intensities are clamped to `[0, 255]`.
pub fn parse_ply(text: &str, frame: &str, ctx: &str) -> Result<IntensityCloud> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::parse(ctx, "missing ply magic"));
    }
    let mut n_vertex = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    for line in lines.by_ref() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(Error::parse(ctx, format!("unsupported format {fmt}")))
            }
            ["element", "vertex", n] => {
                n_vertex = Some(
                    n.parse::<usize>()
                        .map_err(|_| Error::parse(ctx, "bad vertex count"))?,
                );
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _ty, name] if in_vertex => props.push((*name).to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n = n_vertex.ok_or_else(|| Error::parse(ctx, "no vertex element"))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::parse(ctx, format!("missing property {name}")))
    };
    let (cx, cy, cz, ci) = (col("x")?, col("y")?, col("z")?, col("intensity")?);
    let mut points = Vec::with_capacity(n);
    for (k, line) in lines.take(n).enumerate() {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(ctx, format!("bad vertex line {k}")))?;
        if vals.len() < props.len() {
            return Err(Error::parse(ctx, format!("short vertex line {k}")));
        }
        let intensity = vals[ci].round().clamp(0.0, 255.0) as u8;
        points.push(CloudPoint::new(vals[cx], vals[cy], vals[cz], intensity));
    }
    if points.len() != n {
        return Err(Error::parse(ctx, "fewer vertices than declared"));
    }
    let mut cloud = IntensityCloud::new(frame, points);
    cloud.retain_finite();
    Ok(cloud)
}

pub fn read_ply(path: &Path, frame: &str) -> Result<IntensityCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text, frame, &path.display().to_string())
}

/// Parses `scan_<sensorid>_<timestamp_ns>.ply`.
pub fn parse_scan_name(name: &str) -> Option<(u32, u64)> {
    let stem = name.strip_prefix("scan_")?.strip_suffix(".ply")?;
    let (id, ts) = stem.split_once('_')?;
    Some((id.parse().ok()?, ts.parse().ok()?))
}

pub fn scan_name(sensor: u32, timestamp_ns: u64) -> String {
    format!("scan_{sensor}_{timestamp_ns}.ply")
}

pub fn seconds_to_ns(t: f64) -> u64 {
    (t * 1e9).round() as u64
}

pub fn ns_to_seconds(ns: u64) -> f64 {
    ns as f64 * 1e-9
}

pub const TRAJECTORY_HEADER: [&str; 7] = ["timestamp_s", "tx", "ty", "tz", "rx", "ry", "rz"];

pub fn encode_trajectory(samples: &[TrajectorySample]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::parse("trajectory csv", e.to_string());
    w.write_record(TRAJECTORY_HEADER).map_err(to_err)?;
    for s in samples {
        let p = &s.pose;
        w.write_record(
            [s.timestamp, p.tx, p.ty, p.tz, p.rx, p.ry, p.rz].map(|v| v.to_string()),
        )
        .map_err(to_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::parse("trajectory csv", e.to_string()))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectorySample>> {
    let ctx = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Dataset(format!("cannot open trajectory {ctx}: {e}")),
        _ => Error::parse(&ctx, e.to_string()),
    })?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        if rec.len() != 7 {
            return Err(Error::parse(&ctx, format!("expected 7 columns, found {}", rec.len())));
        }
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(&ctx, e.to_string()))?;
        out.push(TrajectorySample {
            timestamp: v[0],
            pose: Pose6::new(v[1], v[2], v[3], v[4], v[5], v[6]),
        });
    }
    Ok(out)
}

/// Parses `key=value` pairs; whitespace separates pairs, `#` starts a comment.
pub fn parse_key_values(text: &str, ctx: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| {
                Error::parse(ctx, format!("line {}: expected key=value, got {tok:?}", lineno + 1))
            })?;
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::parse(ctx, format!("duplicate key {k}")));
            }
        }
    }
    Ok(map)
}

pub fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text, &path.display().to_string())
}

pub(crate) fn get_f64(map: &BTreeMap<String, String>, key: &str, ctx: &str) -> Result<f64> {
    let v = map
        .get(key)
        .ok_or_else(|| Error::parse(ctx, format!("missing key {key}")))?;
    v.parse()
        .map_err(|_| Error::parse(ctx, format!("key {key}: bad number {v:?}")))
}

/// LiDAR extrinsics as `lidar<id>.tx=... lidar<id>.rz=...` (radians).
pub fn encode_lidar_extrinsics(ext: &BTreeMap<u32, Pose6>) -> String {
    let mut s = String::new();
    for (id, p) in ext {
        let _ = writeln!(
            s,
            "lidar{id}.tx={} lidar{id}.ty={} lidar{id}.tz={} lidar{id}.rx={} lidar{id}.ry={} lidar{id}.rz={}",
            p.tx, p.ty, p.tz, p.rx, p.ry, p.rz
        );
    }
    s
}

pub fn parse_lidar_extrinsics(text: &str, ctx: &str) -> Result<BTreeMap<u32, Pose6>> {
    let kv = parse_key_values(text, ctx)?;
    let mut ids = std::collections::BTreeSet::new();
    for k in kv.keys() {
        let id = k
            .strip_prefix("lidar")
            .and_then(|r| r.split_once('.'))
            .and_then(|(id, _)| id.parse::<u32>().ok())
            .ok_or_else(|| Error::parse(ctx, format!("unexpected key {k}")))?;
        ids.insert(id);
    }
    let mut out = BTreeMap::new();
    for id in ids {
        let g = |f: &str| get_f64(&kv, &format!("lidar{id}.{f}"), ctx);
        out.insert(
            id,
            Pose6::new(g("tx")?, g("ty")?, g("tz")?, g("rx")?, g("ry")?, g("rz")?),
        );
    }
    Ok(out)
}

/// Contents of a calibration result file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRecord {
    pub pose: Pose6,
    pub cost: f64,
    pub iters: usize,
    pub converged: bool,
}

/// `tx= ty= tz= rx_deg= ry_deg= rz_deg= cost= iters= converged=`, one pair per line.
pub fn encode_result(r: &ResultRecord) -> String {
    let [rx, ry, rz] = r.pose.rotation_degrees();
    format!(
        "tx={}\nty={}\ntz={}\nrx_deg={}\nry_deg={}\nrz_deg={}\ncost={}\niters={}\nconverged={}\n",
        r.pose.tx, r.pose.ty, r.pose.tz, rx, ry, rz, r.cost, r.iters, r.converged
    )
}

pub fn parse_result(text: &str, ctx: &str) -> Result<ResultRecord> {
    let kv = parse_key_values(text, ctx)?;
    let g = |k: &str| get_f64(&kv, k, ctx);
    let pose = Pose6::from_degrees(g("tx")?, g("ty")?, g("tz")?, g("rx_deg")?, g("ry_deg")?, g("rz_deg")?);
    let iters = kv
        .get("iters")
        .map(|v| v.parse::<usize>().map_err(|_| Error::parse(ctx, format!("bad iters {v:?}"))))
        .transpose()?
        .unwrap_or(0);
    let converged = match kv.get("converged").map(String::as_str) {
        None | Some("true") => true,
        Some("false") => false,
        Some(v) => return Err(Error::parse(ctx, format!("bad converged {v:?}"))),
    };
    Ok(ResultRecord {
        pose,
        cost: kv.get("cost").map_or(Ok(0.0), |_| g("cost"))?,
        iters,
        converged,
    })
}

pub fn write_result(path: &Path, r: &ResultRecord) -> Result<()> {
    write_bytes(path, encode_result(r).as_bytes())
}

pub fn read_result(path: &Path) -> Result<ResultRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_result(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_round_trip() {
        let r = ResultRecord {
            pose: Pose6::from_degrees(1.7, 0.24, 1.6, -92.0, -0.6, -90.3),
            cost: 123.5,
            iters: 321,
            converged: true,
        };
        let back = parse_result(&encode_result(&r), "t").unwrap();
        assert_eq!(back.iters, 321);
        assert!(back.converged);
        assert_eq!(back.cost, 123.5);
        for (a, b) in back.pose.to_array().iter().zip(r.pose.to_array()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(parse_result("tx=1 ty=2", "t").is_err());
    }

    #[test]
    fn pgm16_is_big_endian_with_exact_header() {
        let img = Raster::from_vec(2, 1, vec![0x0102u16, 16 * 8]);
        let bytes = encode_pgm16(&img);
        assert_eq!(&bytes[..bytes.len() - 4], b"P5\n2 1\n65535\n");
        assert_eq!(&bytes[bytes.len() - 4..], &[1, 2, 0, 128]);
        match decode_pgm(&bytes, "t").unwrap() {
            Pgm::Gray16(back) => assert_eq!(back, img),
            _ => panic!("wrong depth"),
        }
    }

    #[test]
    fn pgm8_with_comment_header() {
        let mut bytes = b"P5\n# made by hand\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        match decode_pgm(&bytes, "t").unwrap() {
            Pgm::Gray8(img) => assert_eq!(img.data(), &[1, 2, 3]),
            _ => panic!("wrong depth"),
        }
    }

    #[test]
    fn ply_round_trip_and_clamp() {
        let cloud = IntensityCloud::new(
            "L0",
            vec![CloudPoint::new(1.5, -2.25, 0.125, 200), CloudPoint::new(0.0, 0.0, 9.0, 0)],
        );
        let back = parse_ply(&encode_ply(&cloud), "L0", "t").unwrap();
        assert_eq!(back, cloud);

        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float intensity\nproperty float x\nproperty float y\nproperty float z\nend_header\n300.0 1 2 3\n";
        let c = parse_ply(text, "x", "t").unwrap();
        assert_eq!(c.points[0].intensity, 255);
        assert_eq!(c.points[0].position.x, 1.0);
    }

    #[test]
    fn scan_names() {
        assert_eq!(parse_scan_name(&scan_name(3, 1_500_000_000)), Some((3, 1_500_000_000)));
        assert_eq!(parse_scan_name("scan_x_1.ply"), None);
        assert_eq!(parse_scan_name("left_1.pgm"), None);
    }

    #[test]
    fn key_values_on_one_line() {
        let kv = parse_key_values("a=1 b=2\n# c=3\nd=x # trailing", "t").unwrap();
        assert_eq!(kv.len(), 3);
        assert!(parse_key_values("a=1 a=2", "t").is_err());
        assert!(parse_key_values("oops", "t").is_err());
    }

    #[test]
    fn lidar_extrinsics_round_trip() {
        let mut m = BTreeMap::new();
        m.insert(0, Pose6::new(1.0, 0.5, 2.0, 0.1, 1.2, -3.0));
        m.insert(7, Pose6::identity());
        let back = parse_lidar_extrinsics(&encode_lidar_extrinsics(&m), "t").unwrap();
        for (id, p) in &m {
            let q = back[id];
            for (a, b) in p.to_array().iter().zip(q.to_array()) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
