//! Reading and writing the on-disk formats.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use pitchmap::analytics::{read_tracks, Track};
use pitchmap::homography::{read_calibrations, FrameCalibration};
use pitchmap::ingest::{parse_frames, FrameRecord};
use pitchmap::keypoint_metrics::{parse_predictions, PredictionFrame};
use pitchmap::teams::{SequenceTeams, TrackTeam};
use pitchmap::{FieldConfig, FieldTemplate};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn load_field(path: Option<&Path>) -> Result<FieldTemplate, CliError> {
    let config = match path {
        Some(p) => FieldConfig::load(p)?,
        None => FieldConfig::default(),
    };
    Ok(FieldTemplate::canonical(config)?)
}

pub fn open_input(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}

fn create_output(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("cannot write {}: {e}", path.display()))
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Writes a whole file, creating parent directories.
pub fn write_output(path: &Path, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut out = create_output(path)?;
    write(&mut out).and_then(|_| out.flush()).map_err(|e| io_err(path, e))
}

pub fn write_string(path: &Path, text: &str) -> Result<(), CliError> {
    write_output(path, |w| w.write_all(text.as_bytes()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
    text.push('\n');
    write_string(path, &text)
}

pub fn read_frames(path: &Path) -> Result<Vec<FrameRecord>, CliError> {
    parse_frames(open_input(path)?).map_err(|e| with_path(path, e.into()))
}

pub fn read_homographies(path: &Path) -> Result<Vec<FrameCalibration>, CliError> {
    read_calibrations(open_input(path)?).map_err(|e| match e {
        pitchmap::homography::HomographyError::Record { .. } => CliError::Data(format!("{}: {e}", path.display())),
        other => other.into(),
    })
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionFrame>, CliError> {
    parse_predictions(open_input(path)?).map_err(|e| with_path(path, e.into()))
}

pub fn read_track_file(path: &Path) -> Result<Vec<Track>, CliError> {
    read_tracks(open_input(path)?).map_err(|e| with_path(path, e.into()))
}

pub fn write_track_file(path: &Path, tracks: &[Track]) -> Result<(), CliError> {
    let mut out = create_output(path)?;
    pitchmap::analytics::write_tracks(&mut out, tracks).map_err(|e| with_path(path, e.into()))?;
    out.flush().map_err(|e| io_err(path, e))
}

fn with_path(path: &Path, e: CliError) -> CliError {
    let p = path.display();
    match e {
        CliError::Usage(m) => CliError::Usage(format!("{p}: {m}")),
        CliError::Data(m) => CliError::Data(format!("{p}: {m}")),
        CliError::Numerical(m) => CliError::Numerical(format!("{p}: {m}")),
    }
}

/// Team file written by `teams` and read by `project`, `analyze`, `render`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamsFile {
    pub init_frame: u64,
    pub centroids: [[f64; 3]; 2],
    pub inertia: f64,
    pub tracks: Vec<TrackTeam>,
}

impl TeamsFile {
    pub fn labels(&self) -> BTreeMap<u64, u8> {
        self.tracks.iter().map(|t| (t.track_id, t.team)).collect()
    }
}

impl From<&SequenceTeams> for TeamsFile {
    fn from(s: &SequenceTeams) -> Self {
        Self {
            init_frame: s.init_frame,
            centroids: [s.assignment.centroids[0].as_array(), s.assignment.centroids[1].as_array()],
            inertia: s.assignment.inertia,
            tracks: s.tracks.clone(),
        }
    }
}

pub fn read_teams(path: &Path) -> Result<TeamsFile, CliError> {
    let file: TeamsFile =
        serde_json::from_reader(open_input(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if let Some(t) = file.tracks.iter().find(|t| t.team > 1) {
        return Err(CliError::Data(format!("{}: track {} has team {}", path.display(), t.track_id, t.team)));
    }
    Ok(file)
}

/// Attaches team labels to tracks; tracks missing from `labels` keep theirs.
pub fn label_tracks(tracks: &mut [Track], labels: &BTreeMap<u64, u8>) {
    for t in tracks {
        if let Some(&team) = labels.get(&t.track_id) {
            t.team = Some(team);
        }
    }
}
