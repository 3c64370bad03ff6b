//! Per-run sandbox state with the data-access recorder.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::map::MapState;
use super::vision::{BBox, ObjectClass};
use super::Sandbox;
use crate::types::{Cell, DataPointKey, Period, Product, RegionRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    MissingProduct,
    UnknownRegion,
    DateOutOfRange,
    WrongProduct,
    UnknownScene,
    InvalidArgs,
    UnknownTool,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::MissingProduct => "MissingProduct",
            ErrorCode::UnknownRegion => "UnknownRegion",
            ErrorCode::DateOutOfRange => "DateOutOfRange",
            ErrorCode::WrongProduct => "WrongProduct",
            ErrorCode::UnknownScene => "UnknownScene",
            ErrorCode::InvalidArgs => "InvalidArgs",
            ErrorCode::UnknownTool => "UnknownTool",
        }
    }

    pub fn parse(s: &str) -> Option<ErrorCode> {
        [
            ErrorCode::MissingProduct,
            ErrorCode::UnknownRegion,
            ErrorCode::DateOutOfRange,
            ErrorCode::WrongProduct,
            ErrorCode::UnknownScene,
            ErrorCode::InvalidArgs,
            ErrorCode::UnknownTool,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolError {
    pub code: ErrorCode,
    pub message: String,
}

impl ToolError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ToolError { code, message: message.into() }
    }
}

impl fmt::Display for ToolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.message)
    }
}

impl std::error::Error for ToolError {}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolOutput {
    pub payload: Value,
    pub accessed: BTreeSet<DataPointKey>,
}

impl ToolOutput {
    pub fn new(payload: Value) -> Self {
        ToolOutput { payload, accessed: BTreeSet::new() }
    }
}

/// Append-only set of datapoints touched during one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessRecorder {
    keys: BTreeSet<DataPointKey>,
}

impl AccessRecorder {
    pub fn record(&mut self, keys: &BTreeSet<DataPointKey>) {
        self.keys.extend(keys.iter().copied());
    }

    pub fn keys(&self) -> &BTreeSet<DataPointKey> {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HandleData {
    /// A selection of raw raster values.
    Raster { product: Product, region: Option<RegionRef>, dates: Vec<Period>, cells: BTreeSet<Cell> },
    /// Cells derived by an analysis tool.
    Cells {
        product: Product,
        region: Option<RegionRef>,
        dates: Vec<Period>,
        cells: BTreeSet<Cell>,
        label: String,
    },
    Detections { scene: String, region: RegionRef, cell: Cell, class: ObjectClass, boxes: Vec<BBox> },
}

impl HandleData {
    pub fn product(&self) -> Product {
        match self {
            HandleData::Raster { product, .. } | HandleData::Cells { product, .. } => *product,
            HandleData::Detections { .. } => Product::Detection,
        }
    }

    pub fn cells(&self) -> BTreeSet<Cell> {
        match self {
            HandleData::Raster { cells, .. } | HandleData::Cells { cells, .. } => cells.clone(),
            HandleData::Detections { cell, .. } => [*cell].into(),
        }
    }

    pub fn region(&self) -> Option<&RegionRef> {
        match self {
            HandleData::Raster { region, .. } | HandleData::Cells { region, .. } => region.as_ref(),
            HandleData::Detections { region, .. } => Some(region),
        }
    }

    /// Every (product, cell, date) covered by a raster selection.
    pub fn selection_keys(&self) -> BTreeSet<DataPointKey> {
        match self {
            HandleData::Raster { product, dates, cells, .. } => cells
                .iter()
                .flat_map(|c| dates.iter().map(move |d| DataPointKey::new(*product, *c, *d)))
                .collect(),
            _ => BTreeSet::new(),
        }
    }
}

pub struct SandboxSession {
    sandbox: Arc<Sandbox>,
    handles: BTreeMap<String, HandleData>,
    next_handle: u32,
    recorder: AccessRecorder,
    map: MapState,
}

impl SandboxSession {
    pub fn new(sandbox: Arc<Sandbox>) -> Self {
        SandboxSession {
            sandbox,
            handles: BTreeMap::new(),
            next_handle: 0,
            recorder: AccessRecorder::default(),
            map: MapState::default(),
        }
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }

    pub fn sandbox_arc(&self) -> Arc<Sandbox> {
        self.sandbox.clone()
    }

    pub fn put(&mut self, data: HandleData) -> String {
        self.next_handle += 1;
        let id = format!("@h{}", self.next_handle);
        self.handles.insert(id.clone(), data);
        id
    }

    pub fn get(&self, id: &str) -> Option<&HandleData> {
        self.handles.get(id.trim())
    }

    pub fn handle_count(&self) -> usize {
        self.handles.len()
    }

    pub fn recorder(&self) -> &AccessRecorder {
        &self.recorder
    }

    pub fn record(&mut self, keys: &BTreeSet<DataPointKey>) {
        self.recorder.record(keys);
    }

    pub fn map(&self) -> &MapState {
        &self.map
    }

    pub fn map_mut(&mut self) -> &mut MapState {
        &mut self.map
    }
}
