//! Knowledge base: type inventory, entity membership, notable types and the
//! train/dev/test entity split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

/// Ordered set of type identifiers. Ordinals index score rows and label
/// vectors everywhere else in the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeInventory {
    types: Vec<String>,
    index: HashMap<String, usize>,
}

impl TypeInventory {
    pub fn new(types: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(types.len());
        for (i, t) in types.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::invalid("empty type identifier"));
            }
            if t.chars().any(char::is_whitespace) || t.contains(',') {
                return Err(Error::invalid(format!(
                    "type identifier {t:?} contains whitespace or a comma"
                )));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate type identifier {t:?}")));
            }
        }
        Ok(TypeInventory { types, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut types = Vec::new();
        for (i, line) in util::read_lines(path)?.into_iter().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.chars().any(char::is_whitespace) {
                return Err(Error::parse(
                    path.display().to_string(),
                    i + 1,
                    "type identifier contains whitespace",
                ));
            }
            types.push(line.to_string());
        }
        Self::new(types)
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn ordinal(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, ordinal: usize) -> &str {
        &self.types[ordinal]
    }

    pub fn names(&self) -> &[String] {
        &self.types
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for t in &self.types {
            out.push_str(t);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityRecord {
    pub notable: usize,
    /// Sorted type ordinals; always contains `notable`.
    pub types: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    types: TypeInventory,
    entities: BTreeMap<String, EntityRecord>,
    split: Option<BTreeMap<String, Split>>,
}

impl KnowledgeBase {
    /// Builds a knowledge base from `(entity, notable, types)` rows, enforcing
    /// that every entity has at least one type and that its notable type is
    /// among them.
    pub fn from_rows<I, S>(types: TypeInventory, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, Vec<S>)>,
        S: AsRef<str>,
    {
        let mut entities = BTreeMap::new();
        for (id, notable, members) in rows {
            let id = id.as_ref();
            let record = Self::make_record(&types, id, notable.as_ref(), &members)?;
            if entities.insert(id.to_string(), record).is_some() {
                return Err(Error::invalid(format!("duplicate entity id {id:?}")));
            }
        }
        Ok(KnowledgeBase {
            types,
            entities,
            split: None,
        })
    }

    fn make_record<S: AsRef<str>>(
        types: &TypeInventory,
        id: &str,
        notable: &str,
        members: &[S],
    ) -> Result<EntityRecord> {
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("bad entity id {id:?}")));
        }
        let lookup = |t: &str| {
            types
                .ordinal(t)
                .ok_or_else(|| Error::invalid(format!("entity {id}: unknown type {t:?}")))
        };
        let notable = lookup(notable)?;
        let mut ords = members
            .iter()
            .map(|t| lookup(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        ords.sort_unstable();
        ords.dedup();
        if ords.is_empty() {
            return Err(Error::invalid(format!("entity {id} has no types")));
        }
        if ords.binary_search(&notable).is_err() {
            return Err(Error::invalid(format!(
                "entity {id}: notable type {} is not among its types",
                types.name(notable)
            )));
        }
        Ok(EntityRecord {
            notable,
            types: ords,
        })
    }

    pub fn types(&self) -> &TypeInventory {
        &self.types
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Entity ids in sorted order.
    pub fn entity_ids(&self) -> impl Iterator<Item = &str> {
        self.entities.keys().map(String::as_str)
    }

    pub fn entity(&self, id: &str) -> Option<&EntityRecord> {
        self.entities.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entities.contains_key(id)
    }

    pub fn notable(&self, id: &str) -> Option<usize> {
        self.entities.get(id).map(|r| r.notable)
    }

    /// m(e, t).
    pub fn is_member(&self, id: &str, ordinal: usize) -> bool {
        self.entities
            .get(id)
            .is_some_and(|r| r.types.binary_search(&ordinal).is_ok())
    }

    /// Multi-hot membership row for `id`.
    pub fn label_vector(&self, id: &str) -> Option<Vec<f64>> {
        let rec = self.entities.get(id)?;
        let mut v = vec![0.0; self.types.len()];
        for &t in &rec.types {
            v[t] = 1.0;
        }
        Some(v)
    }

    pub fn has_split(&self) -> bool {
        self.split.is_some()
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.split.as_ref()?.get(id).copied()
    }

    /// Sorted ids of the entities assigned to `split`. Empty if no split has
    /// been assigned.
    pub fn entities_in(&self, split: Split) -> Vec<&str> {
        match &self.split {
            None => Vec::new(),
            Some(map) => map
                .iter()
                .filter(|(_, s)| **s == split)
                .map(|(e, _)| e.as_str())
                .collect(),
        }
    }

    /// Number of entities of `split` holding each type, indexed by ordinal.
    pub fn type_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.types.len()];
        for id in self.entities_in(split) {
            for &t in &self.entities[id].types {
                counts[t] += 1;
            }
        }
        counts
    }

    /// Mean and median number of types per entity of `split`.
    pub fn types_per_entity(&self, split: Split) -> Option<(f64, f64)> {
        let mut sizes: Vec<f64> = self
            .entities_in(split)
            .into_iter()
            .map(|id| self.entities[id].types.len() as f64)
            .collect();
        let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
        util::median(&mut sizes).map(|m| (mean, m))
    }

    /// Assigns a train/dev/test split by a seeded shuffle of the sorted entity
    /// ids. Set sizes follow the largest-remainder rounding of the ratios, each
    /// set receiving at least one entity.
    pub fn split_entities(&self, ratios: (f64, f64, f64), seed: u64) -> Result<KnowledgeBase> {
        let r = [ratios.0, ratios.1, ratios.2];
        if r.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::invalid("split ratios must be positive"));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split ratios must sum to 1"));
        }
        let n = self.entities.len();
        if n < 3 {
            return Err(Error::invalid(format!(
                "need at least 3 entities to split, have {n}"
            )));
        }
        let sizes = split_sizes(n, r);

        let mut ids: Vec<&String> = self.entities.keys().collect();
        ids.shuffle(&mut util::rng(seed));
        let mut split = BTreeMap::new();
        let mut it = ids.into_iter();
        for (s, size) in Split::ALL.into_iter().zip(sizes) {
            for id in it.by_ref().take(size) {
                split.insert(id.clone(), s);
            }
        }
        Ok(KnowledgeBase {
            split: Some(split),
            ..self.clone()
        })
    }

    /// Installs an externally stored split. It must cover every entity.
    pub fn with_split(&self, split: BTreeMap<String, Split>) -> Result<KnowledgeBase> {
        for id in split.keys() {
            if !self.entities.contains_key(id) {
                return Err(Error::invalid(format!("split names unknown entity {id}")));
            }
        }
        if let Some(missing) = self.entities.keys().find(|e| !split.contains_key(*e)) {
            return Err(Error::invalid(format!("entity {missing} has no split")));
        }
        Ok(KnowledgeBase {
            split: Some(split),
            ..self.clone()
        })
    }

    pub fn load(entity_file: &Path, type_file: &Path) -> Result<Self> {
        load_kb(entity_file, type_file)
    }

    /// Entity file contents: `id \t notable \t t1,t2,...`, sorted by id, types
    /// in ordinal order.
    pub fn entity_file_string(&self) -> String {
        let mut out = String::new();
        for (id, rec) in &self.entities {
            let names: Vec<&str> = rec.types.iter().map(|&t| self.types.name(t)).collect();
            out.push_str(&format!(
                "{id}\t{}\t{}\n",
                self.types.name(rec.notable),
                names.join(",")
            ));
        }
        out
    }

    pub fn save(&self, entity_file: &Path, type_file: &Path) -> Result<()> {
        util::write_atomic(type_file, self.types.to_file_string().as_bytes())?;
        util::write_atomic(entity_file, self.entity_file_string().as_bytes())
    }

    pub fn split_file_string(&self) -> Option<String> {
        let split = self.split.as_ref()?;
        let mut out = String::new();
        for (id, s) in split {
            out.push_str(&format!("{id}\t{s}\n"));
        }
        Some(out)
    }

    pub fn save_split(&self, path: &Path) -> Result<()> {
        let text = self
            .split_file_string()
            .ok_or_else(|| Error::invalid("knowledge base has no split assigned"))?;
        util::write_atomic(path, text.as_bytes())
    }

    pub fn load_split(&self, path: &Path) -> Result<KnowledgeBase> {
        let mut split = BTreeMap::new();
        for (i, line) in util::read_lines(path)?.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, s) = line.split_once('\t').ok_or_else(|| {
                Error::parse(
                    path.display().to_string(),
                    i + 1,
                    "expected `entity\\tsplit`",
                )
            })?;
            let s: Split = s.trim().parse().map_err(|e: Error| {
                Error::parse(path.display().to_string(), i + 1, e.to_string())
            })?;
            split.insert(id.to_string(), s);
        }
        self.with_split(split)
    }
}

fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for i in 0..3 {
        sizes[i] = exact[i].floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    // largest remainder first, lower index on ties
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if sizes[i] == 0 {
            let donor = (0..3)
                .max_by_key(|&j| (sizes[j], std::cmp::Reverse(j)))
                .unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    sizes
}

/// Reads the type file (one id per line) and the entity TSV
/// (`entity_id \t notable_type \t comma_separated_types`).
pub fn load_kb(entity_file: &Path, type_file: &Path) -> Result<KnowledgeBase> {
    let types = TypeInventory::load(type_file)?;
    let path = entity_file.display().to_string();
    let mut rows = Vec::new();
    for (i, line) in util::read_lines(entity_file)?.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                &path,
                i + 1,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let members: Vec<String> = fields[2]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        rows.push((
            i + 1,
            fields[0].trim().to_string(),
            fields[1].trim().to_string(),
            members,
        ));
    }
    let mut entities = BTreeMap::new();
    for (line, id, notable, members) in rows {
        let record = KnowledgeBase::make_record(&types, &id, &notable, &members)
            .map_err(|e| Error::parse(&path, line, e.to_string()))?;
        if entities.insert(id.clone(), record).is_some() {
            return Err(Error::parse(
                &path,
                line,
                format!("duplicate entity id {id:?}"),
            ));
        }
    }
    Ok(KnowledgeBase {
        types,
        entities,
        split: None,
    })
}
