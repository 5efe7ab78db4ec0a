//! Coalitions of knowledge players and their enumeration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hard limit on the number of players a [`Coalition`] can address.
pub const MAX_PLAYERS: usize = 64;

/// Largest game for which subset enumeration (2^N evaluations) is allowed.
pub const EXACT_PLAYER_LIMIT: usize = 30;

/// Index `n` of knowledge item `K_n` in the knowledge set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerId(pub usize);

impl PlayerId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "K{}", self.0)
    }
}

/// A subset of the knowledge players, stored as a bitmask.
///
/// The encoding is canonical: equal member sets always produce equal
/// coalitions with equal hashes, whatever order they were built in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coalition {
    mask: u64,
    n_players: u8,
}

impl Coalition {
    pub fn empty(n_players: usize) -> Result<Self> {
        check_player_count(n_players)?;
        Ok(Self {
            mask: 0,
            n_players: n_players as u8,
        })
    }

    pub fn grand(n_players: usize) -> Result<Self> {
        check_player_count(n_players)?;
        Ok(Self {
            mask: full_mask(n_players),
            n_players: n_players as u8,
        })
    }

    /// Builds a coalition from member indices. Order and duplicates are
    /// irrelevant.
    pub fn from_members<I>(indices: I, n_players: usize) -> Result<Self>
    where
        I: IntoIterator<Item = usize>,
    {
        check_player_count(n_players)?;
        let mut mask = 0u64;
        for index in indices {
            if index >= n_players {
                return Err(Error::PlayerOutOfRange { index, n_players });
            }
            mask |= 1 << index;
        }
        Ok(Self {
            mask,
            n_players: n_players as u8,
        })
    }

    pub fn from_mask(mask: u64, n_players: usize) -> Result<Self> {
        check_player_count(n_players)?;
        if mask & !full_mask(n_players) != 0 {
            let index = 63 - (mask & !full_mask(n_players)).leading_zeros() as usize;
            return Err(Error::PlayerOutOfRange { index, n_players });
        }
        Ok(Self {
            mask,
            n_players: n_players as u8,
        })
    }

    /// Canonical encoding, used for ordering and as a dense table index.
    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn n_players(&self) -> usize {
        self.n_players as usize
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn contains(&self, player: PlayerId) -> bool {
        player.0 < self.n_players() && self.mask & (1 << player.0) != 0
    }

    /// Returns `self ∪ {player}`. Panics if the player is out of range.
    pub fn with(&self, player: PlayerId) -> Self {
        assert!(player.0 < self.n_players(), "player {player} out of range");
        Self {
            mask: self.mask | (1 << player.0),
            n_players: self.n_players,
        }
    }

    pub fn without(&self, player: PlayerId) -> Self {
        Self {
            mask: self.mask & !(1u64 << (player.0 & 63)),
            n_players: self.n_players,
        }
    }

    /// Members in ascending index order.
    pub fn members(&self) -> impl Iterator<Item = PlayerId> + '_ {
        (0..self.n_players())
            .filter(|&i| self.mask & (1 << i) != 0)
            .map(PlayerId)
    }

    pub fn member_indices(&self) -> Vec<usize> {
        self.members().map(PlayerId::index).collect()
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, p) in self.members().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", p.0)?;
        }
        f.write_str("}")
    }
}

fn check_player_count(n_players: usize) -> Result<()> {
    if n_players > MAX_PLAYERS {
        return Err(Error::TooManyPlayers {
            n_players,
            limit: MAX_PLAYERS,
            what: "coalitions",
        });
    }
    Ok(())
}

pub(crate) fn check_exact_limit(n_players: usize) -> Result<()> {
    if n_players > EXACT_PLAYER_LIMIT {
        return Err(Error::TooManyPlayers {
            n_players,
            limit: EXACT_PLAYER_LIMIT,
            what: "subset enumeration",
        });
    }
    Ok(())
}

fn full_mask(n_players: usize) -> u64 {
    if n_players == 64 {
        u64::MAX
    } else {
        (1u64 << n_players) - 1
    }
}

/// All 2^N coalitions in ascending canonical order.
pub fn enumerate_all(n_players: usize) -> Result<Vec<Coalition>> {
    check_exact_limit(n_players)?;
    let n = n_players as u8;
    Ok((0..1u64 << n_players)
        .map(|mask| Coalition { mask, n_players: n })
        .collect())
}

/// Every subset of the players other than `excluded`, in ascending canonical
/// order. Yields exactly 2^(N-1) coalitions.
pub fn enumerate_subsets_excluding(n_players: usize, excluded: PlayerId) -> Result<Vec<Coalition>> {
    check_exact_limit(n_players)?;
    if excluded.0 >= n_players {
        return Err(Error::PlayerOutOfRange {
            index: excluded.0,
            n_players,
        });
    }
    let bit = 1u64 << excluded.0;
    let n = n_players as u8;
    Ok((0..1u64 << n_players)
        .filter(|mask| mask & bit == 0)
        .map(|mask| Coalition { mask, n_players: n })
        .collect())
}
