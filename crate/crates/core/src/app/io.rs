//! Frame ingestion and export: Y4M, the SLGF raw format, and in-process scene rendering.
//!
//! SLGF layout: the magic `SLGF`, then width, height and frame count as
//! little-endian `u32`, then `count * width * height` bytes of 8-bit luma.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Frame, FrameError};
use crate::sim::{render_u8, SceneError, SceneSpec};

pub const SLGF_MAGIC: &[u8; 4] = b"SLGF";
pub const SLGF_HEADER_LEN: u64 = 16;
const Y4M_MAGIC: &str = "YUV4MPEG2";
const MAX_HEADER_LINE: usize = 4096;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("cannot parse scene spec: {0}")]
    SceneJson(#[from] serde_json::Error),
}

fn format_err(offset: u64, msg: impl Into<String>) -> InputError {
    InputError::Format { offset, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Y4m,
    Slgf,
    /// A scene spec (JSON) rendered frame by frame.
    Sim,
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "y4m" => Some(Self::Y4m),
            "slgf" | "raw" => Some(Self::Slgf),
            "json" => Some(Self::Sim),
            _ => None,
        }
    }
}

impl std::str::FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "y4m" => Ok(Self::Y4m),
            "slgf" | "raw" => Ok(Self::Slgf),
            "sim" => Ok(Self::Sim),
            other => Err(format!("unknown input format {other:?}")),
        }
    }
}

/// Tracks the byte offset of everything read so far.
struct Counting<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> Counting<R> {
    /// Fills `buf` completely. Returns the number of bytes read on a short read.
    fn fill(&mut self, buf: &mut [u8]) -> io::Result<Result<(), usize>> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => return Ok(Err(got)),
                Ok(n) => {
                    got += n;
                    self.pos += n as u64;
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        Ok(Ok(()))
    }

    /// Reads one `\n`-terminated line without the terminator.
    /// `None` at a clean end of stream.
    fn line(&mut self) -> Result<Option<Vec<u8>>, InputError> {
        let start = self.pos;
        let mut out = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            match self.fill(&mut byte)? {
                Err(_) if out.is_empty() => return Ok(None),
                Err(_) => return Err(format_err(self.pos, "unterminated header line")),
                Ok(()) if byte[0] == b'\n' => return Ok(Some(out)),
                Ok(()) => {
                    out.push(byte[0]);
                    if out.len() > MAX_HEADER_LINE {
                        return Err(format_err(start, "header line too long"));
                    }
                }
            }
        }
    }

    /// Skips `n` bytes, failing at the offset where input ran out.
    fn skip(&mut self, n: u64, what: &str) -> Result<(), InputError> {
        let copied = io::copy(&mut (&mut self.inner).take(n), &mut io::sink())?;
        self.pos += copied;
        if copied < n {
            return Err(format_err(self.pos, format!("truncated {what}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Chroma {
    Mono,
    C420,
    C422,
    C444,
}

impl Chroma {
    fn parse(tag: &str) -> Option<Self> {
        match tag {
            "mono" => Some(Self::Mono),
            "420" | "420jpeg" | "420paldv" | "420mpeg2" => Some(Self::C420),
            "422" => Some(Self::C422),
            "444" => Some(Self::C444),
            _ => None,
        }
    }

    fn chroma_bytes(self, w: u32, h: u32) -> u64 {
        let (w, h) = (w as u64, h as u64);
        match self {
            Self::Mono => 0,
            Self::C420 => 2 * w.div_ceil(2) * h.div_ceil(2),
            Self::C422 => 2 * w.div_ceil(2) * h,
            Self::C444 => 2 * w * h,
        }
    }
}

/// Streaming Y4M reader keeping only the luma plane.
pub struct Y4mReader<R> {
    src: Counting<R>,
    width: u32,
    height: u32,
    chroma: Chroma,
    next_index: u64,
}

impl<R: Read> Y4mReader<R> {
    pub fn new(reader: R) -> Result<Self, InputError> {
        let mut src = Counting { inner: reader, pos: 0 };
        let line = src.line()?.ok_or_else(|| format_err(0, "empty input"))?;
        let text = std::str::from_utf8(&line).map_err(|_| format_err(0, "header is not ASCII"))?;
        let mut offset = 0u64;
        let mut tokens = Vec::new();
        for tok in text.split(' ') {
            tokens.push((offset, tok));
            offset += tok.len() as u64 + 1;
        }
        if tokens.first().map(|t| t.1) != Some(Y4M_MAGIC) {
            return Err(format_err(0, "missing YUV4MPEG2 signature"));
        }
        let (mut width, mut height, mut chroma) = (None, None, Chroma::C420);
        for &(off, tok) in &tokens[1..] {
            let Some(key) = tok.chars().next() else {
                continue;
            };
            let val = &tok[1..];
            match key {
                'W' => width = Some(val.parse::<u32>().map_err(|_| format_err(off, "bad width"))?),
                'H' => height = Some(val.parse::<u32>().map_err(|_| format_err(off, "bad height"))?),
                'C' => {
                    chroma = Chroma::parse(val)
                        .ok_or_else(|| format_err(off, format!("unsupported colorspace {val}")))?;
                }
                'I' if val != "p" && val != "?" => {
                    return Err(format_err(off, "interlaced input is not supported"));
                }
                _ => {}
            }
        }
        let width = width.filter(|&w| w > 0).ok_or_else(|| format_err(0, "missing or zero width"))?;
        let height = height.filter(|&h| h > 0).ok_or_else(|| format_err(0, "missing or zero height"))?;
        Ok(Self { src, width, height, chroma, next_index: 0 })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn read_frame(&mut self) -> Result<Option<Frame>, InputError> {
        let start = self.src.pos;
        let Some(line) = self.src.line()? else {
            return Ok(None);
        };
        if !line.starts_with(b"FRAME") {
            return Err(format_err(start, "expected FRAME marker"));
        }
        let mut luma = vec![0u8; self.width as usize * self.height as usize];
        if self.src.fill(&mut luma)?.is_err() {
            return Err(format_err(self.src.pos, format!("truncated luma plane of frame {}", self.next_index)));
        }
        self.src.skip(self.chroma.chroma_bytes(self.width, self.height), "chroma planes")?;
        let f = Frame::from_u8(self.width, self.height, self.next_index, &luma)?;
        self.next_index += 1;
        Ok(Some(f))
    }
}

impl<R: Read> Iterator for Y4mReader<R> {
    type Item = Result<Frame, InputError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_frame().transpose()
    }
}

/// Streaming SLGF reader.
pub struct SlgfReader<R> {
    src: Counting<R>,
    width: u32,
    height: u32,
    count: u32,
    next_index: u64,
    done: bool,
}

impl<R: Read> SlgfReader<R> {
    pub fn new(reader: R) -> Result<Self, InputError> {
        let mut src = Counting { inner: reader, pos: 0 };
        let mut header = [0u8; SLGF_HEADER_LEN as usize];
        if src.fill(&mut header)?.is_err() {
            return Err(format_err(src.pos, "truncated header"));
        }
        if &header[..4] != SLGF_MAGIC {
            return Err(format_err(0, "missing SLGF magic"));
        }
        let field = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
        let (width, height, count) = (field(4), field(8), field(12));
        if width == 0 {
            return Err(format_err(4, "zero width"));
        }
        if height == 0 {
            return Err(format_err(8, "zero height"));
        }
        Ok(Self { src, width, height, count, next_index: 0, done: false })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    fn read_frame(&mut self) -> Result<Option<Frame>, InputError> {
        if self.next_index == self.count as u64 {
            let mut probe = [0u8; 1];
            if self.src.fill(&mut probe)?.is_ok() {
                return Err(format_err(self.src.pos - 1, "trailing data after last frame"));
            }
            return Ok(None);
        }
        let mut luma = vec![0u8; self.width as usize * self.height as usize];
        if self.src.fill(&mut luma)?.is_err() {
            return Err(format_err(self.src.pos, format!("truncated payload of frame {}", self.next_index)));
        }
        let f = Frame::from_u8(self.width, self.height, self.next_index, &luma)?;
        self.next_index += 1;
        Ok(Some(f))
    }
}

impl<R: Read> Iterator for SlgfReader<R> {
    type Item = Result<Frame, InputError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let r = self.read_frame().transpose();
        if !matches!(r, Some(Ok(_))) {
            self.done = true;
        }
        r
    }
}

/// Renders a scene spec frame by frame.
pub struct SceneSource {
    spec: SceneSpec,
    next: u64,
}

impl SceneSource {
    pub fn new(spec: SceneSpec) -> Result<Self, InputError> {
        spec.validate()?;
        Ok(Self { spec, next: 0 })
    }
}

impl Iterator for SceneSource {
    type Item = Result<Frame, InputError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.spec.duration {
            return None;
        }
        let t = self.next;
        self.next += 1;
        let bytes = render_u8(&self.spec, t);
        Some(Frame::from_u8(self.spec.output_width(), self.spec.frame_h, t, &bytes).map_err(Into::into))
    }
}

pub type FrameStream = Box<dyn Iterator<Item = Result<Frame, InputError>> + Send>;

/// Opens `path` as an ordered frame stream.
pub fn read_frames(path: &Path, format: InputFormat) -> Result<FrameStream, InputError> {
    match format {
        InputFormat::Y4m => Ok(Box::new(Y4mReader::new(BufReader::new(File::open(path)?))?)),
        InputFormat::Slgf => Ok(Box::new(SlgfReader::new(BufReader::new(File::open(path)?))?)),
        InputFormat::Sim => {
            let spec: SceneSpec = serde_json::from_reader(BufReader::new(File::open(path)?))?;
            Ok(Box::new(SceneSource::new(spec)?))
        }
    }
}

/// Writes mono Y4M.
pub struct Y4mWriter<W: Write> {
    out: W,
    frame_len: usize,
}

impl<W: Write> Y4mWriter<W> {
    pub fn new(mut out: W, width: u32, height: u32) -> io::Result<Self> {
        writeln!(out, "{Y4M_MAGIC} W{width} H{height} F25:1 Ip A1:1 Cmono")?;
        Ok(Self { out, frame_len: width as usize * height as usize })
    }

    pub fn write_frame(&mut self, luma: &[u8]) -> io::Result<()> {
        if luma.len() != self.frame_len {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame size does not match header"));
        }
        self.out.write_all(b"FRAME\n")?;
        self.out.write_all(luma)
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Writes SLGF. The frame count is fixed up front.
pub struct SlgfWriter<W: Write> {
    out: W,
    frame_len: usize,
    remaining: u32,
}

impl<W: Write> SlgfWriter<W> {
    pub fn new(mut out: W, width: u32, height: u32, count: u32) -> io::Result<Self> {
        out.write_all(SLGF_MAGIC)?;
        for v in [width, height, count] {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(Self { out, frame_len: width as usize * height as usize, remaining: count })
    }

    pub fn write_frame(&mut self, luma: &[u8]) -> io::Result<()> {
        if luma.len() != self.frame_len || self.remaining == 0 {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame does not fit the SLGF header"));
        }
        self.remaining -= 1;
        self.out.write_all(luma)
    }

    pub fn finish(mut self) -> io::Result<W> {
        if self.remaining != 0 {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "fewer frames than declared"));
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Writes every frame of a scene to `path` in the given format.
pub fn write_scene(spec: &SceneSpec, path: &Path, format: InputFormat) -> Result<(), InputError> {
    spec.validate()?;
    let out = BufWriter::new(File::create(path)?);
    let (w, h) = (spec.output_width(), spec.frame_h);
    match format {
        InputFormat::Y4m => {
            let mut wr = Y4mWriter::new(out, w, h)?;
            for t in 0..spec.duration {
                wr.write_frame(&render_u8(spec, t))?;
            }
            wr.finish()?;
        }
        InputFormat::Slgf => {
            let count = u32::try_from(spec.duration).map_err(|_| format_err(12, "too many frames for SLGF"))?;
            let mut wr = SlgfWriter::new(out, w, h, count)?;
            for t in 0..spec.duration {
                wr.write_frame(&render_u8(spec, t))?;
            }
            wr.finish()?;
        }
        InputFormat::Sim => {
            serde_json::to_writer_pretty(out, spec)?;
        }
    }
    Ok(())
}
