use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{ClassId, Error, Result, SuperclassId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Superclass {
    pub name: String,
    pub expected_count: Option<usize>,
}

/// Named groups of classes. Ids are dense, in registry order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperclassRegistry {
    entries: Vec<Superclass>,
}

const IMAGENET_SUPERCLASSES: [(&str, usize); 11] = [
    ("Dogs", 130),
    ("Other mammals", 88),
    ("Bird", 59),
    ("Reptiles, fish, amphibians", 60),
    ("Invertebrates", 61),
    ("Food, plants, fungi", 63),
    ("Devices", 172),
    ("Structures, furnishing", 90),
    ("Clothes, covering", 92),
    ("Implements, containers, misc. objects", 117),
    ("Vehicles", 68),
];

impl SuperclassRegistry {
    pub fn new(entries: Vec<Superclass>) -> Self {
        SuperclassRegistry { entries }
    }

    /// The eleven hand-made ImageNet groups with their class counts.
    pub fn imagenet() -> Self {
        SuperclassRegistry::new(
            IMAGENET_SUPERCLASSES
                .iter()
                .map(|&(name, n)| Superclass {
                    name: name.to_owned(),
                    expected_count: Some(n),
                })
                .collect(),
        )
    }

    /// Reads `superclass_id<TAB>name[<TAB>expected_count]`. Ids must be dense.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries: Vec<(u32, Superclass)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_owned(),
                line: n + 1,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 {
                return Err(parse_err("expected at least 2 tab-separated columns".into()));
            }
            let id: u32 = cols[0]
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("superclass id: {e}")))?;
            let expected_count = match cols.get(2).map(|s| s.trim()) {
                None | Some("") => None,
                Some(s) => Some(s.parse().map_err(|e| parse_err(format!("count: {e}")))?),
            };
            entries.push((
                id,
                Superclass {
                    name: cols[1].trim().to_owned(),
                    expected_count,
                },
            ));
        }
        entries.sort_by_key(|(id, _)| *id);
        for (i, (id, _)) in entries.iter().enumerate() {
            if *id as usize != i {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: 0,
                    message: format!("superclass ids must be dense, found {id} at position {i}"),
                });
            }
        }
        Ok(SuperclassRegistry::new(entries.into_iter().map(|(_, s)| s).collect()))
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            match e.expected_count {
                Some(n) => s.push_str(&format!("{i}\t{}\t{n}\n", e.name)),
                None => s.push_str(&format!("{i}\t{}\n", e.name)),
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: SuperclassId) -> Option<&Superclass> {
        self.entries.get(id.index())
    }

    pub fn iter(&self) -> impl Iterator<Item = (SuperclassId, &Superclass)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, s)| (SuperclassId(i as u32), s))
    }

    /// Accepts either a numeric id or a (case-insensitive) name.
    pub fn resolve(&self, key: &str) -> Option<SuperclassId> {
        let key = key.trim();
        if let Ok(id) = key.parse::<u32>() {
            return ((id as usize) < self.entries.len()).then_some(SuperclassId(id));
        }
        self.entries
            .iter()
            .position(|s| s.name.eq_ignore_ascii_case(key))
            .map(|i| SuperclassId(i as u32))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub wnid: String,
    pub names: Vec<String>,
    pub wiki_url: String,
    pub superclass: SuperclassId,
}

#[derive(Clone, Debug)]
pub struct ClassTable {
    entries: Vec<ClassEntry>,
    registry: SuperclassRegistry,
    by_wnid: HashMap<String, ClassId>,
}

impl ClassTable {
    /// Validates entries against the registry. Entry `i` gets class id `i`.
    pub fn new(entries: Vec<ClassEntry>, registry: SuperclassRegistry) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::TooFewClasses(entries.len()));
        }
        let mut counts = vec![0usize; registry.len()];
        let mut by_wnid = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            let sc = e.superclass.index();
            if sc >= registry.len() {
                return Err(Error::UnknownSuperclass(e.superclass.to_string()));
            }
            counts[sc] += 1;
            by_wnid.insert(e.wnid.clone(), ClassId(i as u32));
        }
        let has_counts = registry.entries.iter().any(|s| s.expected_count.is_some());
        if has_counts {
            for (s, &actual) in registry.entries.iter().zip(&counts) {
                let expected = s.expected_count.unwrap_or(0);
                if expected != actual {
                    return Err(Error::SuperclassCountMismatch {
                        name: s.name.clone(),
                        expected,
                        actual,
                    });
                }
            }
        }
        Ok(ClassTable {
            entries,
            registry,
            by_wnid,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ClassId) -> Option<&ClassEntry> {
        self.entries.get(id.index())
    }

    pub fn contains(&self, id: ClassId) -> bool {
        id.index() < self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &ClassEntry)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ClassId(i as u32), e))
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> {
        (0..self.entries.len() as u32).map(ClassId)
    }

    pub fn by_wnid(&self, wnid: &str) -> Option<ClassId> {
        self.by_wnid.get(wnid).copied()
    }

    pub fn wnid(&self, id: ClassId) -> Option<&str> {
        self.get(id).map(|e| e.wnid.as_str())
    }

    pub fn superclass_of(&self, id: ClassId) -> SuperclassId {
        self.entries[id.index()].superclass
    }

    pub fn registry(&self) -> &SuperclassRegistry {
        &self.registry
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (id, e) in self.iter() {
            s.push_str(&format!(
                "{id}\t{}\t{}\t{}\t{}\n",
                e.wnid,
                e.names.join(","),
                e.wiki_url,
                self.registry.entries[e.superclass.index()].name
            ));
        }
        s
    }
}

/// Reads `class_id<TAB>wnid<TAB>names<TAB>wiki_url<TAB>superclass`.
pub fn load_class_table(path: impl AsRef<Path>, registry: SuperclassRegistry) -> Result<ClassTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<(ClassId, ClassEntry)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: n + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(parse_err(format!("expected 5 columns, found {}", cols.len())));
        }
        let id = ClassId(
            cols[0]
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("class id: {e}")))?,
        );
        if !seen.insert(id) {
            return Err(Error::DuplicateClass(id));
        }
        let superclass = registry
            .resolve(cols[4])
            .ok_or_else(|| Error::UnknownSuperclass(cols[4].trim().to_owned()))?;
        rows.push((
            id,
            ClassEntry {
                wnid: cols[1].trim().to_owned(),
                names: cols[2]
                    .split(',')
                    .map(|s| s.trim().to_owned())
                    .filter(|s| !s.is_empty())
                    .collect(),
                wiki_url: cols[3].trim().to_owned(),
                superclass,
            },
        ));
    }
    rows.sort_by_key(|(id, _)| *id);
    for (i, (id, _)) in rows.iter().enumerate() {
        if id.0 as usize != i {
            return Err(Error::NonDenseClassIds {
                expected: i as u32,
                found: id.0,
            });
        }
    }
    ClassTable::new(rows.into_iter().map(|(_, e)| e).collect(), registry)
}
