//! The knowledge store.
//!
//! Every channel owns one lineage of DataBlocks. Exactly one block is open at
//! any time (the `t_next` block) and receives source writes. A decision cycle
//! calls [`SpaceHandle::snapshot`], which freezes the open block into a
//! [`DataBlockView`] (the cycle's `t_curr`) and opens the next generation with
//! every product carried forward. Carry-forward shares the product `Arc`s, so
//! the copy is cheap and the original generation stamp survives.
//!
//! A view accepts the cycle's own outputs until it is locked and archived,
//! after which it is frozen for good.

mod archive;
mod product;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde_json::Value;
use thiserror::Error;

pub use archive::{archive_path, read_archive, ArchiveRecord, ArchivedProduct, CycleOutcomeKind};
pub use product::{DataProduct, GenerationId, Provenance};

use crate::clock::{SharedClock, Timestamp};
use archive::ArchiveFile;

/// Number of puts remembered per channel for traceability.
pub const JOURNAL_CAPACITY: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpaceError {
    #[error("channel `{0}` already has a data space")]
    DuplicateChannel(String),
    #[error("invalid name {0:?}")]
    InvalidName(String),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("data space of channel `{0}` is closed")]
    SpaceClosed(String),
    #[error("block of generation {0} is locked")]
    BlockLocked(GenerationId),
    #[error("product `{name}` already written by `{existing}` in this cycle (attempted by `{attempted}`)")]
    DuplicateProducer { name: String, existing: String, attempted: String },
    #[error("block of generation {0} was already archived")]
    AlreadyArchived(GenerationId),
    #[error("archive: {0}")]
    Archive(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockState {
    Open,
    Snapshotted,
    LockedArchived,
}

/// One entry of the put-journal.
#[derive(Debug, Clone)]
pub struct JournalEntry {
    pub generation: GenerationId,
    pub product: Arc<DataProduct>,
    pub replaced: bool,
}

/// Registry of per-channel spaces. Clones share the same spaces.
#[derive(Clone)]
pub struct DataSpace {
    clock: SharedClock,
    archive_dir: Option<PathBuf>,
    channels: Arc<RwLock<HashMap<String, SpaceHandle>>>,
}

impl DataSpace {
    /// A store whose archives live only in memory.
    pub fn in_memory(clock: SharedClock) -> Self {
        DataSpace { clock, archive_dir: None, channels: Arc::new(RwLock::new(HashMap::new())) }
    }

    /// A store that also appends each archive record to
    /// `<archive_dir>/<channel>.jsonl`.
    pub fn with_archive_dir(clock: SharedClock, archive_dir: impl Into<PathBuf>) -> Self {
        DataSpace { clock, archive_dir: Some(archive_dir.into()), channels: Arc::new(RwLock::new(HashMap::new())) }
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }

    pub fn archive_dir(&self) -> Option<&Path> {
        self.archive_dir.as_deref()
    }

    pub fn create_space(&self, channel_id: &str) -> Result<SpaceHandle, SpaceError> {
        if !valid_name(channel_id) {
            return Err(SpaceError::InvalidName(channel_id.to_string()));
        }
        let mut channels = self.channels.write();
        if channels.contains_key(channel_id) {
            return Err(SpaceError::DuplicateChannel(channel_id.to_string()));
        }
        let file = match &self.archive_dir {
            Some(dir) => Some(ArchiveFile::create(dir, channel_id)?),
            None => None,
        };
        let handle = SpaceHandle(Arc::new(ChannelSpace {
            id: channel_id.to_string(),
            clock: self.clock.clone(),
            state: Mutex::new(SpaceState {
                open_generation: GenerationId(0),
                products: BTreeMap::new(),
                journal: VecDeque::new(),
                closed: false,
            }),
            archive: Mutex::new(ArchiveLog { records: Vec::new(), file }),
        }));
        channels.insert(channel_id.to_string(), handle.clone());
        Ok(handle)
    }

    pub fn handle(&self, channel_id: &str) -> Result<SpaceHandle, SpaceError> {
        self.channels.read().get(channel_id).cloned().ok_or_else(|| SpaceError::UnknownChannel(channel_id.to_string()))
    }

    pub fn contains(&self, channel_id: &str) -> bool {
        self.channels.read().contains_key(channel_id)
    }

    pub fn channel_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.channels.read().keys().cloned().collect();
        ids.sort();
        ids
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_control() || c == '/' || c == '\\')
}

struct ChannelSpace {
    id: String,
    clock: SharedClock,
    state: Mutex<SpaceState>,
    archive: Mutex<ArchiveLog>,
}

struct SpaceState {
    open_generation: GenerationId,
    products: BTreeMap<String, Arc<DataProduct>>,
    journal: VecDeque<JournalEntry>,
    closed: bool,
}

struct ArchiveLog {
    records: Vec<Arc<ArchiveRecord>>,
    file: Option<ArchiveFile>,
}

/// Cheap, clonable access to one channel's lineage.
#[derive(Clone)]
pub struct SpaceHandle(Arc<ChannelSpace>);

impl std::fmt::Debug for SpaceHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("SpaceHandle").field(&self.0.id).finish()
    }
}

impl SpaceHandle {
    pub fn channel_id(&self) -> &str {
        &self.0.id
    }

    pub fn now(&self) -> Timestamp {
        self.0.clock.now()
    }

    /// Write a product into the open block, replacing a same-named one.
    /// Returns the generation it landed in.
    pub fn put(&self, mut product: DataProduct) -> Result<GenerationId, SpaceError> {
        if !valid_name(&product.name) {
            return Err(SpaceError::InvalidName(product.name));
        }
        let mut st = self.0.state.lock();
        if st.closed {
            return Err(SpaceError::SpaceClosed(self.0.id.clone()));
        }
        let generation = st.open_generation;
        product.generation = generation;
        let product = Arc::new(product);
        let replaced = st.products.insert(product.name.clone(), product.clone()).is_some();
        if st.journal.len() == JOURNAL_CAPACITY {
            st.journal.pop_front();
        }
        st.journal.push_back(JournalEntry { generation, product, replaced });
        Ok(generation)
    }

    /// Freeze the open block as the cycle's working copy and open the next
    /// generation with every product carried forward.
    pub fn snapshot(&self) -> Result<(GenerationId, DataBlockView), SpaceError> {
        let mut st = self.0.state.lock();
        if st.closed {
            return Err(SpaceError::SpaceClosed(self.0.id.clone()));
        }
        let generation = st.open_generation;
        st.open_generation = generation.next();
        let view = DataBlockView {
            space: self.0.clone(),
            block: Arc::new(Mutex::new(CycleBlock {
                generation,
                products: st.products.clone(),
                cycle_writers: BTreeMap::new(),
                state: BlockState::Snapshotted,
                started_at: self.0.clock.now(),
            })),
        };
        Ok((generation, view))
    }

    pub fn open_generation(&self) -> GenerationId {
        self.0.state.lock().open_generation
    }

    pub fn open_products(&self) -> BTreeMap<String, Arc<DataProduct>> {
        self.0.state.lock().products.clone()
    }

    pub fn open_product(&self, name: &str) -> Option<Arc<DataProduct>> {
        self.0.state.lock().products.get(name).cloned()
    }

    pub fn journal(&self) -> Vec<JournalEntry> {
        self.0.state.lock().journal.iter().cloned().collect()
    }

    pub fn is_closed(&self) -> bool {
        self.0.state.lock().closed
    }

    /// Refuse further writes. Idempotent.
    pub fn close(&self) {
        self.0.state.lock().closed = true;
    }

    /// Accept writes again after [`close`](Self::close); the lineage continues.
    pub fn reopen(&self) {
        self.0.state.lock().closed = false;
    }

    pub fn archive(&self) -> Vec<Arc<ArchiveRecord>> {
        self.0.archive.lock().records.clone()
    }

    pub fn archive_len(&self) -> usize {
        self.0.archive.lock().records.len()
    }

    pub fn archive_file(&self) -> Option<PathBuf> {
        self.0.archive.lock().file.as_ref().map(|f| f.path().to_path_buf())
    }

    pub fn latest_archived(&self) -> Option<Arc<ArchiveRecord>> {
        self.0.archive.lock().records.last().cloned()
    }

    /// Archived values of `product_name`, ascending by generation.
    pub fn history(&self, product_name: &str) -> Vec<(GenerationId, Value)> {
        self.0
            .archive
            .lock()
            .records
            .iter()
            .filter_map(|r| r.value(product_name).map(|v| (r.generation, v.clone())))
            .collect()
    }

    /// The newest value of `product_name`, looking first at the open block
    /// and then back through the archive. Archived-only values come back as a
    /// product stamped with the generation they were archived in.
    pub fn latest(&self, product_name: &str) -> Option<Arc<DataProduct>> {
        if let Some(p) = self.open_product(product_name) {
            return Some(p);
        }
        let archive = self.0.archive.lock();
        archive.records.iter().rev().find_map(|r| {
            r.products.get(product_name).map(|p| {
                Arc::new(DataProduct {
                    name: product_name.to_string(),
                    value: p.value.clone(),
                    produced_by: p.produced_by.clone(),
                    produced_at: r.ended_at,
                    generation: r.generation,
                    origin: None,
                })
            })
        })
    }
}

struct CycleBlock {
    generation: GenerationId,
    products: BTreeMap<String, Arc<DataProduct>>,
    /// product name -> module that wrote it during this cycle
    cycle_writers: BTreeMap<String, String>,
    state: BlockState,
    started_at: Timestamp,
}

/// The `t_curr` block handed to a decision cycle.
#[derive(Clone)]
pub struct DataBlockView {
    space: Arc<ChannelSpace>,
    block: Arc<Mutex<CycleBlock>>,
}

impl std::fmt::Debug for DataBlockView {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = self.block.lock();
        f.debug_struct("DataBlockView")
            .field("channel", &self.space.id)
            .field("generation", &b.generation)
            .field("state", &b.state)
            .finish()
    }
}

impl DataBlockView {
    pub fn channel_id(&self) -> &str {
        &self.space.id
    }

    pub fn generation(&self) -> GenerationId {
        self.block.lock().generation
    }

    pub fn state(&self) -> BlockState {
        self.block.lock().state
    }

    pub fn started_at(&self) -> Timestamp {
        self.block.lock().started_at
    }

    pub fn get(&self, name: &str) -> Option<Arc<DataProduct>> {
        self.block.lock().products.get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.block.lock().products.contains_key(name)
    }

    pub fn products(&self) -> BTreeMap<String, Arc<DataProduct>> {
        self.block.lock().products.clone()
    }

    pub fn product_names(&self) -> Vec<String> {
        self.block.lock().products.keys().cloned().collect()
    }

    /// Add a cycle output (transform product, fact value, inference result,
    /// publisher report) to this block.
    pub fn record_cycle_product(&self, mut product: DataProduct) -> Result<(), SpaceError> {
        if !valid_name(&product.name) {
            return Err(SpaceError::InvalidName(product.name));
        }
        let mut b = self.block.lock();
        if b.state != BlockState::Snapshotted {
            return Err(SpaceError::BlockLocked(b.generation));
        }
        if let Some(existing) = b.cycle_writers.get(&product.name) {
            if *existing != product.produced_by {
                return Err(SpaceError::DuplicateProducer {
                    name: product.name,
                    existing: existing.clone(),
                    attempted: product.produced_by,
                });
            }
        }
        product.generation = b.generation;
        b.cycle_writers.insert(product.name.clone(), product.produced_by.clone());
        b.products.insert(product.name.clone(), Arc::new(product));
        Ok(())
    }

    /// Lock the block and append its archive record. The block never changes
    /// afterwards.
    pub fn lock_and_archive(&self, outcome: CycleOutcomeKind) -> Result<Arc<ArchiveRecord>, SpaceError> {
        let mut b = self.block.lock();
        match b.state {
            BlockState::Snapshotted => {}
            BlockState::LockedArchived => return Err(SpaceError::AlreadyArchived(b.generation)),
            BlockState::Open => return Err(SpaceError::BlockLocked(b.generation)),
        }
        let record = Arc::new(ArchiveRecord {
            channel_id: self.space.id.clone(),
            generation: b.generation,
            outcome,
            started_at: b.started_at,
            ended_at: self.space.clock.now(),
            products: b
                .products
                .iter()
                .map(|(name, p)| {
                    (
                        name.clone(),
                        ArchivedProduct {
                            produced_by: p.produced_by.clone(),
                            source_generation: p.generation,
                            value: p.value.clone(),
                        },
                    )
                })
                .collect(),
        });
        let mut log = self.space.archive.lock();
        if let Some(file) = log.file.as_mut() {
            file.append(&record)?;
        }
        log.records.push(record.clone());
        b.state = BlockState::LockedArchived;
        Ok(record)
    }
}
