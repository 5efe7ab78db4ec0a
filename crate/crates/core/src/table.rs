//! Value tables: the coalition → performance map being attributed.
//!
//! JSON layout:
//!
//! ```json
//! {"n_players": 3, "players": ["OneHot", "C-I", "C-II"],
//!  "entries": [{"members": [], "value": 0.0}, {"members": [0], "value": 0.0353}]}
//! ```
//!
//! CSV layout (header `members,value`, members `;`-joined, empty for ∅):
//!
//! ```text
//! members,value
//! ,0.8372
//! 0,0.8725
//! 0;2,0.9686
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coalition::{enumerate_all, EXACT_PLAYER_LIMIT};
use crate::shapley::ValueFunction;
use crate::{Coalition, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    n_players: usize,
    players: Vec<String>,
    entries: BTreeMap<u64, f64>,
    // Dense copy indexed by mask, present when the table is complete.
    dense: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    n_players: usize,
    #[serde(default)]
    players: Vec<String>,
    entries: Vec<TableFileEntry>,
}

#[derive(Serialize, Deserialize)]
struct TableFileEntry {
    members: Vec<usize>,
    value: f64,
}

#[derive(Deserialize)]
struct CsvRow {
    members: String,
    value: f64,
}

pub fn default_player_names(n_players: usize) -> Vec<String> {
    (0..n_players).map(|i| format!("K{i}")).collect()
}

impl ValueTable {
    /// Builds a table from `(coalition, value)` pairs. The empty coalition
    /// must be present and no coalition may appear twice.
    pub fn new<I>(n_players: usize, players: Vec<String>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Coalition, f64)>,
    {
        if players.len() != n_players {
            return Err(Error::Table(format!(
                "{} player names given for {n_players} players",
                players.len()
            )));
        }
        let mut map = BTreeMap::new();
        for (c, v) in entries {
            if c.n_players() != n_players {
                return Err(Error::PlayerCountMismatch {
                    expected: n_players,
                    found: c.n_players(),
                });
            }
            if !v.is_finite() {
                return Err(Error::Table(format!("non-finite value for coalition {c}")));
            }
            if map.insert(c.mask(), v).is_some() {
                return Err(Error::Table(format!("duplicate coalition {c}")));
            }
        }
        if !map.contains_key(&0) {
            return Err(Error::Table("missing the empty coalition".into()));
        }
        let dense = (n_players <= EXACT_PLAYER_LIMIT && map.len() == 1usize << n_players)
            .then(|| map.values().copied().collect());
        Ok(Self {
            n_players,
            players,
            entries: map,
            dense,
        })
    }

    /// Complete table from a function of the coalition.
    pub fn from_fn<F>(n_players: usize, players: Vec<String>, mut f: F) -> Result<Self>
    where
        F: FnMut(Coalition) -> f64,
    {
        let coalitions = enumerate_all(n_players)?;
        Self::new(
            n_players,
            players,
            coalitions.into_iter().map(|c| (c, f(c))),
        )
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn players(&self) -> &[String] {
        &self.players
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.dense.is_some()
    }

    pub fn get(&self, coalition: &Coalition) -> Option<f64> {
        if coalition.n_players() != self.n_players {
            return None;
        }
        match &self.dense {
            Some(d) => d.get(coalition.mask() as usize).copied(),
            None => self.entries.get(&coalition.mask()).copied(),
        }
    }

    pub fn empty_value(&self) -> f64 {
        self.entries[&0]
    }

    pub fn grand_value(&self) -> Option<f64> {
        Coalition::grand(self.n_players)
            .ok()
            .and_then(|g| self.get(&g))
    }

    /// Entries in ascending canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (Coalition, f64)> + '_ {
        let n = self.n_players;
        self.entries
            .iter()
            .map(move |(&m, &v)| (Coalition::from_mask(m, n).expect("validated mask"), v))
    }

    /// Dense values indexed by mask, if complete.
    pub fn dense_values(&self) -> Option<&[f64]> {
        self.dense.as_deref()
    }

    /// The improvement table `V(S) = value(S) - value(∅)`, so `V(∅) = 0`.
    pub fn normalized(&self) -> Self {
        let base = self.empty_value();
        self.map_values(|c, v| if c.is_empty() { 0.0 } else { v - base })
    }

    pub fn map_values<F>(&self, mut f: F) -> Self
    where
        F: FnMut(Coalition, f64) -> f64,
    {
        let n = self.n_players;
        let entries: BTreeMap<u64, f64> = self
            .entries
            .iter()
            .map(|(&m, &v)| (m, f(Coalition::from_mask(m, n).unwrap(), v)))
            .collect();
        let dense = self
            .dense
            .as_ref()
            .map(|_| entries.values().copied().collect());
        Self {
            n_players: n,
            players: self.players.clone(),
            entries,
            dense,
        }
    }

    pub fn with_players(mut self, players: Vec<String>) -> Result<Self> {
        if players.len() != self.n_players {
            return Err(Error::Table(format!(
                "{} player names given for {} players",
                players.len(),
                self.n_players
            )));
        }
        self.players = players;
        Ok(self)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(s)?;
        let players = if file.players.is_empty() {
            default_player_names(file.n_players)
        } else {
            file.players
        };
        let mut entries = Vec::with_capacity(file.entries.len());
        for e in file.entries {
            entries.push((Coalition::from_members(e.members, file.n_players)?, e.value));
        }
        Self::new(file.n_players, players, entries)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = TableFile {
            n_players: self.n_players,
            players: self.players.clone(),
            entries: self
                .iter()
                .map(|(c, value)| TableFileEntry {
                    members: c.member_indices(),
                    value,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Reads the CSV layout. The player count is the largest member index
    /// plus one unless given explicitly.
    pub fn from_csv_reader<R: Read>(reader: R, n_players: Option<usize>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "members" || &headers[1] != "value" {
            return Err(Error::Table(format!(
                "expected CSV header `members,value`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for row in rdr.deserialize() {
            let row: CsvRow = row?;
            let members = if row.members.is_empty() {
                Vec::new()
            } else {
                row.members
                    .split(';')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Table(format!("bad member index `{s}`")))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            rows.push((members, row.value));
        }
        let n = match n_players {
            Some(n) => n,
            None => rows
                .iter()
                .flat_map(|(m, _)| m.iter().copied())
                .max()
                .map_or(0, |m| m + 1),
        };
        let entries = rows
            .into_iter()
            .map(|(m, v)| Ok((Coalition::from_members(m, n)?, v)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, default_player_names(n), entries)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["members", "value"])?;
        for (c, v) in self.iter() {
            let members = c
                .member_indices()
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([members, format!("{v:?}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a table, choosing the layout from the file extension
    /// (`.csv` for CSV, anything else JSON).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if is_csv(path) {
            Self::from_csv_reader(fs::File::open(path)?, None)
        } else {
            Self::from_json_str(&fs::read_to_string(path)?)
        }
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if is_csv(path) {
            let mut buf = Vec::new();
            self.write_csv(&mut buf)?;
            fs::write(path, buf)?;
        } else {
            fs::write(path, self.to_json_string()?)?;
        }
        Ok(())
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

impl ValueFunction for ValueTable {
    fn evaluate(&self, coalition: Coalition) -> Result<f64> {
        if coalition.n_players() != self.n_players {
            return Err(Error::PlayerCountMismatch {
                expected: self.n_players,
                found: coalition.n_players(),
            });
        }
        self.get(&coalition)
            .ok_or_else(|| Error::MissingCoalition(coalition.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_missing_empty_coalition() {
        let json = r#"{"n_players": 2, "entries": [{"members": [0], "value": 1.0}]}"#;
        assert!(matches!(
            ValueTable::from_json_str(json),
            Err(Error::Table(_))
        ));
        let csv = "members,value\n0,1.0\n1,2.0\n";
        assert!(ValueTable::from_csv_reader(csv.as_bytes(), None).is_err());
    }

    #[test]
    fn rejects_duplicate_rows() {
        let json = r#"{"n_players": 2, "entries": [
            {"members": [], "value": 0.0},
            {"members": [0, 1], "value": 1.0},
            {"members": [1, 0], "value": 2.0}]}"#;
        let err = ValueTable::from_json_str(json).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn rejects_malformed() {
        assert!(ValueTable::from_json_str("{not json").is_err());
        assert!(ValueTable::from_csv_reader("a,b\n,1\n".as_bytes(), None).is_err());
        assert!(ValueTable::from_csv_reader("members,value\nx,1\n".as_bytes(), None).is_err());
        let out_of_range = r#"{"n_players": 1, "entries": [{"members": [], "value": 0.0}, {"members": [1], "value": 0.0}]}"#;
        assert!(ValueTable::from_json_str(out_of_range).is_err());
    }

    #[test]
    fn csv_layout() {
        let csv = "members,value\n,0.5\n0,0.75\n1,0.25\n0;1,1.0\n";
        let t = ValueTable::from_csv_reader(csv.as_bytes(), None).unwrap();
        assert_eq!(t.n_players(), 2);
        assert!(t.is_complete());
        assert_eq!(
            t.get(&Coalition::from_members([1, 0], 2).unwrap()),
            Some(1.0)
        );
        let n = t.normalized();
        assert_eq!(n.empty_value(), 0.0);
        assert_eq!(n.grand_value(), Some(0.5));
    }

    #[test]
    fn partial_table_lookup() {
        let t = ValueTable::new(
            3,
            default_player_names(3),
            [(Coalition::empty(3).unwrap(), 0.0)],
        )
        .unwrap();
        assert!(!t.is_complete());
        assert!(matches!(
            t.evaluate(Coalition::from_members([1], 3).unwrap()),
            Err(Error::MissingCoalition(_))
        ));
    }

    proptest! {
        #[test]
        fn store_load_round_trip(n in 1usize..6, seed in any::<u64>(), csv in any::<bool>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = ValueTable::from_fn(n, default_player_names(n), |_| rng.random_range(-1.0..1.0)).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join(if csv { "t.csv" } else { "t.json" });
            t.store(&path).unwrap();
            let back = ValueTable::load(&path).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
