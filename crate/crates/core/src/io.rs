//! On-disk formats: multi-page float TIFF, slide descriptors, and atomic
//! text/JSON output.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype::Gray32Float, TiffEncoder};
use tiff::tags::Tag;

use crate::error::{Error, Result};
use crate::image::{Modality, MultiChannelImage, Plane, ZStack};
use crate::scalar::Real;

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// reader never sees a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::format(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::format(path, e))
}

/// One JSON object per line.
pub fn write_jsonl<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::format(path, e))?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub fn read_jsonl<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<D>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PageDescription {
    pixel_size_um: f64,
    channel: String,
}

/// Encodes planes as consecutive 32-bit float pages. Each page carries its
/// pixel size and channel name as JSON in the ImageDescription tag.
pub fn encode_tiff<T: Real>(pages: &[Plane<T>], names: &[String]) -> Result<Vec<u8>> {
    let fail = |e: tiff::TiffError| Error::InvalidImage(format!("tiff encode: {e}"));
    if pages.is_empty() || names.len() != pages.len() {
        return Err(Error::InvalidImage("tiff needs one name per page and at least one page".into()));
    }
    let mut buf = Cursor::new(Vec::new());
    {
        let mut enc = TiffEncoder::new(&mut buf).map_err(fail)?;
        for (p, name) in pages.iter().zip(names) {
            let desc = serde_json::to_string(&PageDescription { pixel_size_um: p.pixel_size_um(), channel: name.clone() })
                .expect("page description serializes");
            let data: Vec<f32> = p.as_slice().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
            let mut img = enc.new_image::<Gray32Float>(p.width() as u32, p.height() as u32).map_err(fail)?;
            img.encoder().write_tag(Tag::ImageDescription, desc.as_str()).map_err(fail)?;
            img.write_data(&data).map_err(fail)?;
        }
    }
    Ok(buf.into_inner())
}

pub fn write_tiff<T: Real>(path: &Path, pages: &[Plane<T>], names: &[String]) -> Result<()> {
    write_atomic(path, &encode_tiff(pages, names)?)
}

/// Reads every page as `f32`. Pages lacking a description get pixel size 1
/// and a positional channel name.
pub fn read_tiff(path: &Path) -> Result<(Vec<Plane<f32>>, Vec<String>)> {
    let fail = |e: tiff::TiffError| Error::format(path, e);
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(f)).map_err(fail)?.with_limits(Limits::unlimited());
    let mut pages = Vec::new();
    let mut names = Vec::new();
    loop {
        let (w, h) = dec.dimensions().map_err(fail)?;
        let desc = dec
            .find_tag(Tag::ImageDescription)
            .map_err(fail)?
            .and_then(|v| v.into_string().ok())
            .and_then(|s| serde_json::from_str::<PageDescription>(&s).ok());
        let data: Vec<f32> = match dec.read_image().map_err(fail)? {
            DecodingResult::F32(v) => v,
            DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
            DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
            DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
            _ => return Err(Error::format(path, "unsupported sample format")),
        };
        if data.len() != (w as usize) * (h as usize) {
            return Err(Error::format(path, "only single-sample pages are supported"));
        }
        let (px, name) = match desc {
            Some(d) => (d.pixel_size_um, d.channel),
            None => (1.0, pages.len().to_string()),
        };
        pages.push(Plane::new(h as usize, w as usize, data, px).map_err(|e| Error::format(path, e))?);
        names.push(name);
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(fail)?;
    }
    Ok((pages, names))
}

pub fn write_image_tiff<T: Real>(path: &Path, img: &MultiChannelImage<T>) -> Result<()> {
    write_tiff(path, img.channels(), img.channel_names())
}

pub fn read_image_tiff(path: &Path, modality: Modality) -> Result<MultiChannelImage<f32>> {
    let (pages, names) = read_tiff(path)?;
    MultiChannelImage::with_names(modality, pages, names).map_err(|e| Error::format(path, e))
}

/// JSON sidecar describing one slide. `paths` lists either one multi-page
/// TIFF per z-level (pages in channel order) or one single-page TIFF per
/// (z, channel), z-major. Relative paths resolve against the descriptor's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideDescriptor {
    pub modality: Modality,
    pub pixel_size_um: f64,
    pub z_offsets_um: Vec<f64>,
    pub channels: Vec<String>,
    pub paths: Vec<PathBuf>,
}

impl SlideDescriptor {
    pub fn load(path: &Path) -> Result<(Self, ZStack<f32>)> {
        let desc: SlideDescriptor = read_json(path)?;
        let (nz, nc) = (desc.z_offsets_um.len(), desc.channels.len());
        let per_page = nc > 1 && desc.paths.len() == nz * nc;
        if desc.paths.len() != nz && !per_page {
            return Err(Error::format(
                path,
                format!("{} paths for {nz} z-levels and {nc} channels", desc.paths.len()),
            ));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let group = if per_page { nc } else { 1 };
        let levels = desc
            .paths
            .chunks(group)
            .map(|files| {
                let mut pages = Vec::with_capacity(nc);
                for p in files {
                    let full = base.join(p);
                    let (mut found, _) = read_tiff(&full)?;
                    if per_page {
                        found.truncate(1);
                    }
                    pages.extend(found.into_iter().map(|pl| pl.with_pixel_size(desc.pixel_size_um)));
                }
                MultiChannelImage::with_names(desc.modality, pages, desc.channels.clone())
                    .map_err(|e| Error::format(&base.join(&files[0]), e))
            })
            .collect::<Result<Vec<_>>>()?;
        let stack = ZStack::new(levels, desc.z_offsets_um.clone()).map_err(|e| Error::format(path, e))?;
        Ok((desc, stack))
    }

    /// Writes `stack` as `<stem>_z<k>.tif` next to `path` plus the descriptor.
    pub fn save<T: Real>(path: &Path, stack: &ZStack<T>) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "slide".into());
        let mut paths = Vec::with_capacity(stack.len());
        for (k, level) in stack.levels().iter().enumerate() {
            let rel = PathBuf::from(format!("{stem}_z{k}.tif"));
            write_image_tiff(&base.join(&rel), level)?;
            paths.push(rel);
        }
        let first = &stack.levels()[0];
        let desc = SlideDescriptor {
            modality: stack.modality(),
            pixel_size_um: first.pixel_size_um(),
            z_offsets_um: stack.z_offsets_um().to_vec(),
            channels: first.channel_names().to_vec(),
            paths,
        };
        write_json(path, &desc)?;
        Ok(desc)
    }
}

/// Buffered writer that lands at `path` only on [`AtomicFile::commit`].
pub struct AtomicFile {
    path: PathBuf,
    buf: BufWriter<Vec<u8>>,
}

impl AtomicFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), buf: BufWriter::new(Vec::new()) }
    }

    pub fn commit(self) -> Result<()> {
        let path = self.path;
        let bytes = self.buf.into_inner().map_err(|e| Error::io(&path, e.into_error()))?;
        write_atomic(&path, &bytes)
    }
}

impl Write for AtomicFile {
    fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
        self.buf.write(b)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.buf.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiff_round_trip_keeps_values_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let a = Plane::<f32>::from_fn(5, 7, |y, x| y as f32 * 0.5 - x as f32).with_pixel_size(0.1);
        let b = Plane::<f32>::from_fn(5, 7, |y, x| (y * x) as f32 / 3.0).with_pixel_size(0.1);
        let path = dir.path().join("x.tif");
        write_tiff(&path, &[a.clone(), b.clone()], &["465".into(), "517".into()]).unwrap();
        let (pages, names) = read_tiff(&path).unwrap();
        assert_eq!(names, vec!["465", "517"]);
        assert_eq!(pages, vec![a, b]);
    }

    #[test]
    fn descriptor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let level = |v: f32| MultiChannelImage::new(Modality::Bf, vec![Plane::filled(4, 6, v).with_pixel_size(0.2); 3]).unwrap();
        let stack = ZStack::new(vec![level(0.1), level(0.2), level(0.3)], ZStack::<f32>::centered_offsets(3, 0.4)).unwrap();
        let path = dir.path().join("s.json");
        SlideDescriptor::save(&path, &stack).unwrap();
        let (desc, loaded) = SlideDescriptor::load(&path).unwrap();
        assert_eq!(desc.modality, Modality::Bf);
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded.levels()[2].channels()[1][(3, 5)], 0.3);
        assert_eq!(loaded.z_offsets_um(), stack.z_offsets_um());
    }

    #[test]
    fn descriptor_with_one_page_per_channel() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for z in 0..2 {
            for c in 0..4 {
                let rel = PathBuf::from(format!("p_z{z}_c{c}.tif"));
                write_tiff(&dir.path().join(&rel), &[Plane::<f32>::filled(3, 3, (10 * z + c) as f32)], &[c.to_string()]).unwrap();
                paths.push(rel);
            }
        }
        let desc = SlideDescriptor {
            modality: Modality::Fl,
            pixel_size_um: 0.25,
            z_offsets_um: vec![-0.4, 0.4],
            channels: Modality::Fl.default_channel_names(),
            paths,
        };
        let path = dir.path().join("fl.json");
        write_json(&path, &desc).unwrap();
        let (_, stack) = SlideDescriptor::load(&path).unwrap();
        assert_eq!(stack.levels()[1].channels()[2][(0, 0)], 12.0);
        assert_eq!(stack.levels()[0].channels()[3].pixel_size_um(), 0.25);

        let bad = SlideDescriptor { paths: desc.paths[..3].to_vec(), ..desc };
        write_json(&path, &bad).unwrap();
        assert!(SlideDescriptor::load(&path).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
