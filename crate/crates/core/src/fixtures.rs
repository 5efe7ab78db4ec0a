//! Embedded test-accuracy tables from the MNIST and CIFAR10 semi-supervised
//! knowledge-injection experiments. Raw accuracies are stored verbatim and
//! normalized to improvements over the no-knowledge row at load time.

use crate::{Coalition, Error, Result, ValueTable};

/// `(members, test accuracy)` rows.
type RawRows = [(&'static [usize], f64); 8];

pub const MNIST_PLAYERS: [&str; 3] = ["OneHot", "C-I", "C-II"];
pub const CIFAR10_PLAYERS: [&str; 3] = ["OneHot", "Animal", "Mammal"];

pub const MNIST_ACCURATE: RawRows = [
    (&[], 0.8372),
    (&[0], 0.8725),
    (&[1], 0.9224),
    (&[2], 0.9654),
    (&[0, 1], 0.9396),
    (&[0, 2], 0.9686),
    (&[1, 2], 0.9733),
    (&[0, 1, 2], 0.9775),
];

/// Same knowledge set with 10% of the C-II truth bits flipped.
pub const MNIST_IMPERFECT_C2: RawRows = [
    (&[], 0.8372),
    (&[0], 0.8725),
    (&[1], 0.9224),
    (&[2], 0.9425),
    (&[0, 1], 0.9396),
    (&[0, 2], 0.9590),
    (&[1, 2], 0.9678),
    (&[0, 1, 2], 0.9687),
];

pub const CIFAR10: RawRows = [
    (&[], 0.7558),
    (&[0], 0.7716),
    (&[1], 0.7948),
    (&[2], 0.8024),
    (&[0, 1], 0.7983),
    (&[0, 2], 0.8105),
    (&[1, 2], 0.8177),
    (&[0, 1, 2], 0.8208),
];

/// Names accepted by [`by_name`].
pub const FIXTURE_NAMES: [&str; 3] = ["mnist", "mnist-imperfect", "cifar10"];

fn raw_table(rows: &RawRows, players: &[&str; 3]) -> ValueTable {
    let entries = rows
        .iter()
        .map(|(m, v)| (Coalition::from_members(m.iter().copied(), 3).unwrap(), *v));
    ValueTable::new(3, players.iter().map(|s| s.to_string()).collect(), entries)
        .expect("embedded fixture is a complete table")
}

pub fn mnist_accurate_raw() -> ValueTable {
    raw_table(&MNIST_ACCURATE, &MNIST_PLAYERS)
}

pub fn mnist_imperfect_raw() -> ValueTable {
    raw_table(&MNIST_IMPERFECT_C2, &MNIST_PLAYERS)
}

pub fn cifar10_raw() -> ValueTable {
    raw_table(&CIFAR10, &CIFAR10_PLAYERS)
}

/// MNIST accurate-knowledge improvements over the no-knowledge accuracy.
pub fn mnist_accurate() -> ValueTable {
    mnist_accurate_raw().normalized()
}

pub fn mnist_imperfect() -> ValueTable {
    mnist_imperfect_raw().normalized()
}

pub fn cifar10() -> ValueTable {
    cifar10_raw().normalized()
}

/// Raw (un-normalized) accuracy table by fixture name.
pub fn raw_by_name(name: &str) -> Result<ValueTable> {
    match name {
        "mnist" => Ok(mnist_accurate_raw()),
        "mnist-imperfect" => Ok(mnist_imperfect_raw()),
        "cifar10" => Ok(cifar10_raw()),
        other => Err(Error::UnknownFixture(other.to_string())),
    }
}

pub fn by_name(name: &str) -> Result<ValueTable> {
    raw_by_name(name).map(|t| t.normalized())
}
