//! Minimal single-file NIfTI-1 (`.nii`) support.
//!
//! Reads uint8, int16, float32 and float64 data in either byte order, applies
//! `scl_slope`/`scl_inter`, and reduces the sform (or qform) to spacing plus origin.
//! Only axis-aligned orientations are accepted; negative axis directions are
//! normalised by reversing the data along that axis so world positions are kept.
//! Writing always produces little-endian float32 with identical qform and sform.

use std::fs;
use std::path::Path;

use super::{Grid, Volume};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

/// Relative size of an off-diagonal affine entry that counts as oblique.
const OBLIQUE_TOL: f64 = 1e-6;

struct Reader<'a> {
    bytes: &'a [u8],
    little: bool,
}

impl Reader<'_> {
    fn array<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[at..at + N]);
        if !self.little {
            out.reverse();
        }
        out
    }

    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.array(at))
    }

    fn f32(&self, at: usize) -> f64 {
        f32::from_le_bytes(self.array(at)) as f64
    }

    fn f64(&self, at: usize) -> f64 {
        f64::from_le_bytes(self.array(at))
    }
}

pub(super) fn read(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes)
}

pub(super) fn parse(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "truncated NIfTI header: {} bytes, need {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let little = match i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) {
        348 => true,
        v if v.swap_bytes() == 348 => false,
        v => return Err(Error::Format(format!("sizeof_hdr is {v}, expected 348"))),
    };
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::Format(
            "missing single-file NIfTI-1 magic \"n+1\"".into(),
        ));
    }
    let r = Reader { bytes, little };

    let dim: Vec<i16> = (0..8).map(|i| r.i16(40 + 2 * i)).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("invalid dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for axis in 0..3 {
        if (axis as i16) < ndim {
            let d = dim[axis + 1];
            if d < 1 {
                return Err(Error::Format(format!("invalid dim[{}] = {d}", axis + 1)));
            }
            dims[axis] = d as usize;
        }
    }
    if (4..=ndim as usize).any(|i| dim[i] > 1) {
        return Err(Error::Format(
            "only single 3-D volumes are supported (dims 4..7 must be 1)".into(),
        ));
    }

    let datatype = r.i16(70);
    let pixdim: Vec<f64> = (0..8).map(|i| r.f32(76 + 4 * i)).collect();
    let vox_offset = r.f32(108);
    let scl_slope = r.f32(112);
    let scl_inter = r.f32(116);
    let qform_code = r.i16(252);
    let sform_code = r.i16(254);

    // voxel -> world as a 3x4 matrix
    let mut affine = [[0.0f64; 4]; 3];
    if sform_code > 0 {
        for (row, out) in affine.iter_mut().enumerate() {
            for (col, v) in out.iter_mut().enumerate() {
                *v = r.f32(280 + 16 * row + 4 * col);
            }
        }
    } else if qform_code > 0 {
        let b = r.f32(256);
        let c = r.f32(260);
        let d = r.f32(264);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let rot = [
            [
                a * a + b * b - c * c - d * d,
                2.0 * (b * c - a * d),
                2.0 * (b * d + a * c),
            ],
            [
                2.0 * (b * c + a * d),
                a * a + c * c - b * b - d * d,
                2.0 * (c * d - a * b),
            ],
            [
                2.0 * (b * d - a * c),
                2.0 * (c * d + a * b),
                a * a + d * d - c * c - b * b,
            ],
        ];
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = [pixdim[1], pixdim[2], pixdim[3] * qfac];
        for row in 0..3 {
            for col in 0..3 {
                affine[row][col] = rot[row][col] * scale[col];
            }
        }
        affine[0][3] = r.f32(268);
        affine[1][3] = r.f32(272);
        affine[2][3] = r.f32(276);
    } else {
        for axis in 0..3 {
            affine[axis][axis] = pixdim[axis + 1];
        }
    }

    let diag_max = (0..3).map(|a| affine[a][a].abs()).fold(0.0, f64::max);
    for (row, vals) in affine.iter().enumerate() {
        for (col, v) in vals.iter().take(3).enumerate() {
            if row != col && v.abs() > OBLIQUE_TOL * diag_max {
                return Err(Error::Geometry(
                    "oblique or permuted orientations are not supported".into(),
                ));
            }
        }
    }
    let mut spacing = [0.0; 3];
    let mut origin = [0.0; 3];
    let mut flip = [false; 3];
    for axis in 0..3 {
        let step = affine[axis][axis];
        if step == 0.0 || !step.is_finite() {
            return Err(Error::Geometry(format!(
                "zero voxel size along axis {axis}"
            )));
        }
        spacing[axis] = step.abs();
        flip[axis] = step < 0.0;
        origin[axis] = if flip[axis] {
            affine[axis][3] + step * (dims[axis] - 1) as f64
        } else {
            affine[axis][3]
        };
    }
    let grid = Grid::new(dims, spacing, origin)?;

    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::Format(format!(
                "unsupported NIfTI datatype code {other}"
            )))
        }
    };
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f64) {
        return Err(Error::Format(format!("invalid vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let end = start + grid.len() * width;
    if bytes.len() < end {
        return Err(Error::Format(format!(
            "truncated NIfTI data: {} bytes, need {end}",
            bytes.len()
        )));
    }
    let sample = |i: usize| -> f64 {
        let at = start + i * width;
        match datatype {
            DT_UINT8 => bytes[at] as f64,
            DT_INT16 => r.i16(at) as f64,
            DT_FLOAT32 => r.f32(at),
            _ => r.f64(at),
        }
    };
    let apply_scaling = scl_slope != 0.0 && scl_slope.is_finite();
    let inter = if scl_inter.is_finite() {
        scl_inter
    } else {
        0.0
    };

    let mut data = vec![0.0; grid.len()];
    for (idx, out) in data.iter_mut().enumerate() {
        let [mut i, mut j, mut k] = grid.coords(idx);
        if flip[0] {
            i = dims[0] - 1 - i;
        }
        if flip[1] {
            j = dims[1] - 1 - j;
        }
        if flip[2] {
            k = dims[2] - 1 - k;
        }
        let raw = sample(grid.index(i, j, k));
        *out = if apply_scaling {
            scl_slope * raw + inter
        } else {
            raw
        };
    }
    Volume::new(grid, data)
}

pub(super) fn encode(v: &Volume) -> Vec<u8> {
    let g = v.grid();
    let mut h = vec![0u8; DATA_OFFSET];
    let put_i16 =
        |h: &mut Vec<u8>, at: usize, x: i16| h[at..at + 2].copy_from_slice(&x.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, at: usize, x: f64| {
        h[at..at + 4].copy_from_slice(&(x as f32).to_le_bytes())
    };

    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    h[38] = b'r'; // regular
    put_i16(&mut h, 40, 3);
    for axis in 0..3 {
        put_i16(&mut h, 42 + 2 * axis, g.dims[axis] as i16);
    }
    for i in 3..7 {
        put_i16(&mut h, 42 + 2 * i, 1);
    }
    put_i16(&mut h, 70, DT_FLOAT32);
    put_i16(&mut h, 72, 32);
    put_f32(&mut h, 76, 1.0);
    for axis in 0..3 {
        put_f32(&mut h, 80 + 4 * axis, g.spacing[axis]);
    }
    put_f32(&mut h, 108, DATA_OFFSET as f64);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    h[123] = 2; // xyzt_units: millimetres
    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);
    for axis in 0..3 {
        put_f32(&mut h, 268 + 4 * axis, g.origin[axis]);
        put_f32(&mut h, 280 + 16 * axis + 4 * axis, g.spacing[axis]);
        put_f32(&mut h, 280 + 16 * axis + 12, g.origin[axis]);
    }
    h[344..348].copy_from_slice(b"n+1\0");

    h.reserve(v.data().len() * 4);
    for &x in v.data() {
        h.extend_from_slice(&(x as f32).to_le_bytes());
    }
    h
}

pub(super) fn write(v: &Volume, path: &Path) -> Result<()> {
    if v.dims().iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Geometry(format!(
            "dims {:?} exceed the NIfTI-1 limit of {}",
            v.dims(),
            i16::MAX
        )));
    }
    fs::write(path, encode(v)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(dims: [i16; 3], datatype: i16, bitpix: i16) -> Vec<u8> {
        let mut h = vec![0u8; DATA_OFFSET];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        h[40..42].copy_from_slice(&3i16.to_le_bytes());
        for a in 0..3 {
            h[42 + 2 * a..44 + 2 * a].copy_from_slice(&dims[a].to_le_bytes());
        }
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        h[72..74].copy_from_slice(&bitpix.to_le_bytes());
        for a in 0..3 {
            h[80 + 4 * a..84 + 4 * a].copy_from_slice(&1.0f32.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352.0f32.to_le_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h
    }

    #[test]
    fn int16_with_slope_is_scaled() {
        let mut bytes = header([8, 8, 8], DT_INT16, 16);
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&0.5f32.to_le_bytes());
        for i in 0..512i16 {
            bytes.extend_from_slice(&(i - 100).to_le_bytes());
        }
        let v = parse(&bytes).unwrap();
        assert_eq!(v.data()[0], -199.5);
        assert_eq!(v.data()[511], 2.0 * 411.0 + 0.5);
        assert_eq!(v.spacing(), [1.0; 3]);
    }

    #[test]
    fn zero_slope_means_no_scaling() {
        let mut bytes = header([8, 8, 8], DT_UINT8, 8);
        bytes.extend((0..512).map(|i| (i % 251) as u8));
        let v = parse(&bytes).unwrap();
        assert_eq!(v.data()[300], (300 % 251) as f64);
    }

    #[test]
    fn big_endian_float64() {
        let mut bytes = header([8, 8, 8], DT_FLOAT64, 64);
        // byte-swap every multi-byte header field we set
        let swap = |b: &mut Vec<u8>, at: usize, n: usize| b[at..at + n].reverse();
        swap(&mut bytes, 0, 4);
        for at in [40, 42, 44, 46, 70, 72] {
            swap(&mut bytes, at, 2);
        }
        for at in [80, 84, 88, 108] {
            swap(&mut bytes, at, 4);
        }
        for i in 0..512 {
            bytes.extend_from_slice(&(i as f64 * 0.25).to_be_bytes());
        }
        let v = parse(&bytes).unwrap();
        assert_eq!(v.data()[10], 2.5);
        assert_eq!(v.dims(), [8, 8, 8]);
    }

    #[test]
    fn truncated_header_and_data() {
        assert!(matches!(parse(&[0u8; 100]), Err(Error::Format(_))));
        let bytes = header([8, 8, 8], DT_FLOAT32, 32);
        assert!(matches!(parse(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn unsupported_dtype_and_bad_magic() {
        let mut bytes = header([8, 8, 8], 512, 16);
        bytes.extend(vec![0u8; 1024]);
        assert!(matches!(parse(&bytes), Err(Error::Format(_))));

        let mut bytes = header([8, 8, 8], DT_UINT8, 8);
        bytes.extend(vec![0u8; 512]);
        bytes[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(parse(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn small_dims_are_a_geometry_error() {
        let mut bytes = header([4, 8, 8], DT_UINT8, 8);
        bytes.extend(vec![0u8; 256]);
        assert!(matches!(parse(&bytes), Err(Error::Geometry(_))));
    }

    #[test]
    fn sform_with_flipped_x_keeps_world_positions() {
        let mut bytes = header([8, 8, 8], DT_UINT8, 8);
        bytes[254..256].copy_from_slice(&1i16.to_le_bytes());
        let srow = [
            [-2.0f32, 0.0, 0.0, 10.0],
            [0.0, 1.0, 0.0, -3.0],
            [0.0, 0.0, 1.5, 4.0],
        ];
        for (r, row) in srow.iter().enumerate() {
            for (c, x) in row.iter().enumerate() {
                let at = 280 + 16 * r + 4 * c;
                bytes[at..at + 4].copy_from_slice(&x.to_le_bytes());
            }
        }
        bytes.extend((0..512).map(|i| (i % 8) as u8)); // value = stored i index
        let v = parse(&bytes).unwrap();
        assert_eq!(v.spacing(), [2.0, 1.0, 1.5]);
        assert_eq!(v.origin(), [10.0 - 14.0, -3.0, 4.0]);
        // stored index 7 sits at world x = 10 - 14; after the flip it is voxel 0
        assert_eq!(v.at(0, 0, 0), 7.0);
        assert_eq!(v.at(7, 3, 2), 0.0);
    }

    #[test]
    fn oblique_sform_is_rejected() {
        let mut bytes = header([8, 8, 8], DT_UINT8, 8);
        bytes[254..256].copy_from_slice(&1i16.to_le_bytes());
        let srow = [
            [0.9f32, 0.3, 0.0, 0.0],
            [-0.3, 0.9, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        for (r, row) in srow.iter().enumerate() {
            for (c, x) in row.iter().enumerate() {
                let at = 280 + 16 * r + 4 * c;
                bytes[at..at + 4].copy_from_slice(&x.to_le_bytes());
            }
        }
        bytes.extend(vec![0u8; 512]);
        assert!(matches!(parse(&bytes), Err(Error::Geometry(_))));
    }

    #[test]
    fn qform_identity_with_offset() {
        let mut bytes = header([8, 8, 8], DT_UINT8, 8);
        bytes[252..254].copy_from_slice(&1i16.to_le_bytes());
        bytes[76..80].copy_from_slice(&1.0f32.to_le_bytes());
        bytes[84..88].copy_from_slice(&0.5f32.to_le_bytes());
        for (a, x) in [1.0f32, 2.0, 3.0].iter().enumerate() {
            bytes[268 + 4 * a..272 + 4 * a].copy_from_slice(&x.to_le_bytes());
        }
        bytes.extend(vec![1u8; 512]);
        let v = parse(&bytes).unwrap();
        assert_eq!(v.spacing(), [1.0, 0.5, 1.0]);
        assert_eq!(v.origin(), [1.0, 2.0, 3.0]);
    }
}
