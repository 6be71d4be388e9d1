//! Clip manifests: one `key=value` record per line.
//!
//! ```text
//! clip=<path> subject=<id> au=<number> modality=<tag> [lux=<int>] [bbox=x,y,w,h]
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Clip paths are
//! resolved against the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::taxonomy::AuLabel;
use super::DatasetError;
use crate::representation::BoundingBox;

pub const LUX_RANGE: std::ops::RangeInclusive<u32> = 150..=1400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    EventsDavis,
    EventsEvk4,
    RgbWebcam,
    RgbDavis,
    EventsSynthetic,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::EventsDavis => "events-davis",
            Modality::EventsEvk4 => "events-evk4",
            Modality::RgbWebcam => "rgb-webcam",
            Modality::RgbDavis => "rgb-davis",
            Modality::EventsSynthetic => "events-synthetic",
        }
    }

    pub fn is_events(self) -> bool {
        matches!(
            self,
            Modality::EventsDavis | Modality::EventsEvk4 | Modality::EventsSynthetic
        )
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            Modality::EventsDavis,
            Modality::EventsEvk4,
            Modality::RgbWebcam,
            Modality::RgbDavis,
            Modality::EventsSynthetic,
        ]
        .into_iter()
        .find(|m| m.tag() == s)
        .ok_or_else(|| format!("unknown modality {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_path: PathBuf,
    pub subject: String,
    pub label: AuLabel,
    pub modality: Modality,
    pub lux: Option<u32>,
    pub bbox: Option<BoundingBox>,
}

impl fmt::Display for ClipRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "clip={} subject={} au={} modality={}",
            self.clip_path.display(),
            self.subject,
            self.label.au_number(),
            self.modality.tag()
        )?;
        if let Some(lux) = self.lux {
            write!(f, " lux={lux}")?;
        }
        if let Some(b) = self.bbox {
            write!(f, " bbox={},{},{},{}", b.x0, b.y0, b.w, b.h)?;
        }
        Ok(())
    }
}

fn parse_line(line: &str, lineno: usize, base: &Path) -> Result<ClipRecord, DatasetError> {
    let bad = |reason: String| DatasetError::MalformedManifest { line: lineno, reason };
    let (mut clip, mut subject, mut au, mut modality, mut lux, mut bbox) =
        (None, None, None, None, None, None);
    for token in line.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got {token:?}")))?;
        if value.is_empty() {
            return Err(bad(format!("empty value for {key}")));
        }
        let dup = match key {
            "clip" => clip.replace(value).is_some(),
            "subject" => subject.replace(value).is_some(),
            "au" => {
                let n: u32 = value.parse().map_err(|_| bad(format!("bad AU number {value:?}")))?;
                au.replace(n).is_some()
            }
            "modality" => modality.replace(value.parse::<Modality>().map_err(bad)?).is_some(),
            "lux" => {
                let n: u32 = value.parse().map_err(|_| bad(format!("bad lux {value:?}")))?;
                if !LUX_RANGE.contains(&n) {
                    return Err(bad(format!("lux {n} outside {LUX_RANGE:?}")));
                }
                lux.replace(n).is_some()
            }
            "bbox" => {
                let b: BoundingBox = value.parse().map_err(|_| bad(format!("bad bbox {value:?}")))?;
                bbox.replace(b).is_some()
            }
            other => return Err(bad(format!("unknown key {other:?}"))),
        };
        if dup {
            return Err(bad(format!("duplicate key {key}")));
        }
    }
    let missing = |k: &str| bad(format!("missing {k}"));
    let label = AuLabel::from_au(au.ok_or_else(|| missing("au"))?)?;
    Ok(ClipRecord {
        clip_path: base.join(clip.ok_or_else(|| missing("clip"))?),
        subject: subject.ok_or_else(|| missing("subject"))?.to_string(),
        label,
        modality: modality.ok_or_else(|| missing("modality"))?,
        lux,
        bbox,
    })
}

/// Parse manifest text; clip paths are joined onto `base` but not checked.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ClipRecord>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(i, l)| parse_line(l, i + 1, base))
        .collect()
}

/// Read a manifest and check that every referenced clip exists.
pub fn load_manifest(path: &Path) -> Result<Vec<ClipRecord>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let records = parse_manifest(&text, base)?;
    if let Some(r) = records.iter().find(|r| !r.clip_path.is_file()) {
        return Err(DatasetError::MissingFile(r.clip_path.clone()));
    }
    Ok(records)
}

pub fn format_manifest(records: &[ClipRecord]) -> String {
    records.iter().map(|r| format!("{r}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_record() {
        let recs = parse_manifest(
            "# comment\n\nclip=a/b.evm subject=s1 au=45 modality=events-davis lux=300 bbox=1,2,30,30\n",
            Path::new("root"),
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.clip_path, Path::new("root/a/b.evm"));
        assert_eq!(r.label.description(), "Blink");
        assert_eq!(r.lux, Some(300));
        assert_eq!(r.bbox.unwrap().w, 30);
        let line = r.to_string();
        assert_eq!(parse_manifest(&line, Path::new("")).unwrap()[0], *r);
    }

    #[test]
    fn rejects_bad_lines() {
        let base = Path::new("");
        assert_eq!(
            parse_manifest("clip=a subject=s au=99 modality=rgb-webcam", base),
            Err(DatasetError::UnknownAu(99))
        );
        for text in [
            "clip=a subject=s modality=rgb-webcam",
            "clip=a subject=s au=2 modality=infrared",
            "clip=a subject=s au=2 modality=rgb-webcam lux=20",
            "clip=a subject=s au=2 au=4 modality=rgb-webcam",
            "clip=a subject=s au=2 modality=rgb-webcam colour=red",
            "clip=a subject=s au=2 modality=rgb-webcam bbox=1,2",
            "clip subject=s au=2 modality=rgb-webcam",
        ] {
            assert!(
                matches!(parse_manifest(text, base), Err(DatasetError::MalformedManifest { line: 1, .. })),
                "{text}"
            );
        }
        assert_eq!(parse_manifest("", base).unwrap(), vec![]);
    }

    #[test]
    fn missing_clip_file() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.txt");
        std::fs::write(&m, "clip=nope.evm subject=s au=2 modality=events-evk4\n").unwrap();
        assert!(matches!(load_manifest(&m), Err(DatasetError::MissingFile(_))));
        std::fs::write(dir.path().join("nope.evm"), b"").unwrap();
        assert_eq!(load_manifest(&m).unwrap().len(), 1);
    }
}
