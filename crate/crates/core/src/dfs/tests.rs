use std::io::{Read, Seek, SeekFrom};
use std::sync::Arc;
use std::time::Duration;

use super::*;
use crate::clock::ManualClock;

fn setup(nodes: usize, block_size: u64, replication: usize) -> (Arc<Cluster>, Arc<MemoryStore>, Dfs) {
    let cluster = Arc::new(Cluster::new(Arc::new(ManualClock::new()), Duration::from_secs(5)));
    for _ in 0..nodes {
        cluster.register_node(2).unwrap();
    }
    let store = Arc::new(MemoryStore::new());
    let dfs = Dfs::new(
        DfsConfig {
            block_size,
            replication,
            placement_seed: 7,
        },
        cluster.clone(),
        store.clone(),
    );
    (cluster, store, dfs)
}

fn lengths(meta: &FileMeta) -> Vec<u64> {
    meta.blocks.iter().map(|b| b.length).collect()
}

#[test]
fn empty_file_has_no_blocks() {
    let (_, _, dfs) = setup(2, 4, 2);
    let meta = dfs.put("/a", b"").unwrap();
    assert!(meta.blocks.is_empty());
    assert_eq!(meta.length, 0);
    assert_eq!(dfs.get("/a").unwrap(), b"");
}

#[test]
fn put_splits_by_ceiling() {
    let (_, _, dfs) = setup(3, 4, 2);
    let meta = dfs.put("/b", b"0123456789").unwrap();
    assert_eq!(lengths(&meta), vec![4, 4, 2]);
    for b in &meta.blocks {
        assert_eq!(b.locations.len(), 2);
    }
    assert_eq!(dfs.get("/b").unwrap(), b"0123456789");
}

#[test]
fn put_existing_path_is_rejected() {
    let (_, _, dfs) = setup(2, 4, 2);
    dfs.put("/a", b"x").unwrap();
    assert_eq!(dfs.put("/a", b"y"), Err(DfsError::AlreadyExists("/a".into())));
    assert_eq!(dfs.get("/a").unwrap(), b"x");
}

#[test]
fn put_needs_enough_live_nodes() {
    let (cluster, _, dfs) = setup(2, 4, 2);
    cluster.inject_node_failure(NodeId(1)).unwrap();
    assert_eq!(
        dfs.put("/a", b"x"),
        Err(DfsError::InsufficientNodes { needed: 2, live: 1 })
    );
}

#[test]
fn directory_prefix_conflicts_rejected() {
    let (_, _, dfs) = setup(2, 4, 2);
    dfs.put("/out/part-00000", b"x").unwrap();
    assert!(matches!(dfs.put("/out", b"y"), Err(DfsError::PathConflict { .. })));
    dfs.put("/a", b"y").unwrap();
    assert!(matches!(dfs.put("/a/b", b"z"), Err(DfsError::PathConflict { .. })));
    dfs.put("/outx", b"fine").unwrap();
}

#[test]
fn invalid_paths_rejected() {
    let (_, _, dfs) = setup(2, 4, 2);
    for p in ["", "a", "/", "/a/", "//a", "/a/./b", "/a/../b", "/a\nb"] {
        assert_eq!(dfs.put(p, b"x"), Err(DfsError::InvalidPath(p.into())), "{p:?}");
    }
}

#[test]
fn get_missing_is_not_found() {
    let (_, _, dfs) = setup(2, 4, 2);
    assert_eq!(dfs.get("/missing"), Err(DfsError::NotFound("/missing".into())));
}

#[test]
fn get_survives_one_holder_loss_per_block() {
    let (cluster, _, dfs) = setup(4, 4, 2);
    let content: Vec<u8> = (0..=255).collect();
    let meta = dfs.put("/x", &content).unwrap();
    // Kill, without repair, one holder of the first block; the other replica serves.
    let victim = *meta.blocks[0].locations.iter().next().unwrap();
    cluster.inject_node_failure(victim).unwrap();
    assert_eq!(dfs.get("/x").unwrap(), content);
}

#[test]
fn all_replicas_dead_is_block_unavailable() {
    let (cluster, _, dfs) = setup(2, 4, 2);
    dfs.put("/x", b"abc").unwrap();
    cluster.inject_node_failure(NodeId(1)).unwrap();
    cluster.inject_node_failure(NodeId(2)).unwrap();
    assert!(matches!(dfs.get("/x"), Err(DfsError::BlockUnavailable { .. })));
}

#[test]
fn append_fills_partial_block_first() {
    let (_, _, dfs) = setup(3, 4, 2);
    dfs.put("/b", b"0123456789").unwrap();
    let meta = dfs.append("/b", b"ab").unwrap();
    assert_eq!(lengths(&meta), vec![4, 4, 4]);
    let meta = dfs.append("/b", b"cdefg").unwrap();
    assert_eq!(lengths(&meta), vec![4, 4, 4, 4, 1]);
    assert_eq!(meta.length, 17);
    assert_eq!(dfs.get("/b").unwrap(), b"0123456789abcdefg");
}

#[test]
fn append_never_touches_sealed_blocks() {
    let (_, _, dfs) = setup(3, 4, 2);
    let before = dfs.put("/b", b"012345").unwrap();
    let after = dfs.append("/b", b"6789").unwrap();
    assert_eq!(before.blocks[0], after.blocks[0]);
    assert_ne!(before.blocks[1].id, after.blocks[1].id);
}

#[test]
fn append_to_missing_is_not_found() {
    let (_, _, dfs) = setup(2, 4, 2);
    assert_eq!(dfs.append("/nope", b"x"), Err(DfsError::NotFound("/nope".into())));
}

#[test]
fn append_to_empty_file() {
    let (_, _, dfs) = setup(2, 4, 2);
    dfs.put("/e", b"").unwrap();
    let meta = dfs.append("/e", b"hello").unwrap();
    assert_eq!(lengths(&meta), vec![4, 1]);
    assert_eq!(dfs.get("/e").unwrap(), b"hello");
}

#[test]
fn stale_tail_replicas_are_removed_after_append() {
    let (_, store, dfs) = setup(2, 4, 2);
    dfs.put("/b", b"01").unwrap();
    assert_eq!(store.replica_count(), 2);
    dfs.append("/b", b"23").unwrap();
    assert_eq!(store.replica_count(), 2);
}

#[test]
fn rename_moves_file() {
    let (_, _, dfs) = setup(2, 4, 2);
    dfs.put("/a", b"old").unwrap();
    dfs.rename("/a", "/b").unwrap();
    assert_eq!(dfs.get("/b").unwrap(), b"old");
    assert_eq!(dfs.get("/a"), Err(DfsError::NotFound("/a".into())));
}

#[test]
fn rename_errors() {
    let (_, _, dfs) = setup(2, 4, 2);
    dfs.put("/a", b"1").unwrap();
    dfs.put("/a2", b"2").unwrap();
    assert_eq!(dfs.rename("/a", "/a2"), Err(DfsError::AlreadyExists("/a2".into())));
    assert_eq!(dfs.rename("/zz", "/q"), Err(DfsError::NotFound("/zz".into())));
    assert_eq!(dfs.get("/a").unwrap(), b"1");
}

#[test]
fn rename_below_own_old_path_is_allowed() {
    let (_, _, dfs) = setup(2, 4, 2);
    dfs.put("/a", b"1").unwrap();
    // "/a/b" would sit below the file "/a", but that file is the one moving.
    dfs.rename("/a", "/a/b").unwrap();
    assert_eq!(dfs.get("/a/b").unwrap(), b"1");
}

#[test]
fn ls_is_prefix_filtered_and_byte_ordered() {
    let (_, _, dfs) = setup(2, 4, 2);
    assert!(dfs.ls("/").is_empty());
    dfs.put("/ab", b"").unwrap();
    dfs.put("/a", b"").unwrap();
    dfs.put("/b", b"").unwrap();
    let got: Vec<String> = dfs.ls("/a").into_iter().map(|m| m.path).collect();
    assert_eq!(got, vec!["/a", "/ab"]);
    assert_eq!(dfs.ls("/").len(), 3);
    assert!(dfs.ls("/c").is_empty());
}

#[test]
fn delete_frees_path_and_replicas() {
    let (_, store, dfs) = setup(2, 4, 2);
    dfs.put("/a", b"12345").unwrap();
    assert_eq!(store.replica_count(), 4);
    dfs.delete("/a").unwrap();
    assert_eq!(store.replica_count(), 0);
    assert_eq!(dfs.get("/a"), Err(DfsError::NotFound("/a".into())));
    assert_eq!(dfs.delete("/a"), Err(DfsError::NotFound("/a".into())));
    dfs.put("/a", b"again").unwrap();
    assert_eq!(dfs.get("/a").unwrap(), b"again");
}

#[test]
fn block_ids_are_not_reused() {
    let (_, _, dfs) = setup(2, 4, 2);
    let first = dfs.put("/a", b"1234").unwrap().blocks[0].id;
    dfs.delete("/a").unwrap();
    let second = dfs.put("/a", b"1234").unwrap().blocks[0].id;
    assert!(second > first);
}

#[test]
fn repair_without_affected_blocks_is_zero() {
    let (cluster, _, dfs) = setup(3, 4, 2);
    dfs.put("/a", b"12").unwrap();
    // registered after the put, so it holds nothing
    let extra = cluster.register_node(1).unwrap();
    cluster.inject_node_failure(extra).unwrap();
    assert_eq!(dfs.replicate_repair(extra), RepairReport::default());
}

#[test]
fn repair_restores_replication() {
    let (cluster, _, dfs) = setup(4, 4, 2);
    // Place 5 blocks, then pick a node and count the blocks it holds.
    let content: Vec<u8> = (0..40).collect();
    dfs.put("/f", &content).unwrap();
    let meta = dfs.stat("/f").unwrap();
    let victim = NodeId(1);
    let affected = meta
        .blocks
        .iter()
        .filter(|b| b.locations.contains(&victim))
        .count();
    // Direct repair without going through the cluster listener.
    cluster.inject_node_failure(victim).unwrap();
    let report = dfs.replicate_repair(victim);
    assert_eq!(report.repaired, affected);
    assert!(report.irreparable.is_empty());
    for b in dfs.stat("/f").unwrap().blocks {
        assert_eq!(b.locations.len(), 2);
        assert!(!b.locations.contains(&victim));
    }
    assert_eq!(dfs.get("/f").unwrap(), content);
}

#[test]
fn repair_of_five_blocks_each_on_failed_node() {
    let (cluster, _, dfs) = setup(4, 4, 2);
    let victim = NodeId(2);
    // Retry placement until five blocks all include the victim.
    let mut i = 0;
    let mut paths = Vec::new();
    while paths.len() < 5 {
        let p = format!("/blk{i}");
        i += 1;
        let meta = dfs.put(&p, b"abcd").unwrap();
        if meta.blocks[0].locations.contains(&victim) {
            paths.push(p);
        } else {
            dfs.delete(&p).unwrap();
        }
    }
    cluster.inject_node_failure(victim).unwrap();
    let report = dfs.replicate_repair(victim);
    assert_eq!(report.repaired, 5);
    for p in &paths {
        assert_eq!(dfs.stat(p).unwrap().blocks[0].locations.len(), 2);
        assert_eq!(dfs.get(p).unwrap(), b"abcd");
    }
}

#[test]
fn sole_replica_loss_is_irreparable() {
    let (cluster, _, dfs) = setup(2, 4, 1);
    let meta = dfs.put("/one", b"12345").unwrap();
    let victim = *meta.blocks[0].locations.iter().next().unwrap();
    let lost: Vec<BlockId> = meta
        .blocks
        .iter()
        .filter(|b| b.locations.contains(&victim))
        .map(|b| b.id)
        .collect();
    cluster.inject_node_failure(victim).unwrap();
    let report = dfs.replicate_repair(victim);
    assert_eq!(report.repaired, 0);
    assert_eq!(report.irreparable, lost);
}

#[test]
fn repair_limited_by_live_nodes() {
    let (cluster, _, dfs) = setup(2, 4, 2);
    dfs.put("/f", b"12345678").unwrap();
    cluster.inject_node_failure(NodeId(1)).unwrap();
    let report = dfs.replicate_repair(NodeId(1));
    // only one node left: min(replication, live) = 1, nothing to copy to
    assert_eq!(report.repaired, 0);
    for b in dfs.stat("/f").unwrap().blocks {
        assert_eq!(b.locations.iter().copied().collect::<Vec<_>>(), vec![NodeId(2)]);
    }
}

#[test]
fn read_range_and_reader_agree_with_get() {
    let (_, _, dfs) = setup(3, 4, 2);
    let content = b"hello, distributed world";
    dfs.put("/r", content).unwrap();
    assert_eq!(dfs.read_range("/r", 3, 9).unwrap(), &content[3..12]);
    assert_eq!(dfs.read_range("/r", 20, 100).unwrap(), &content[20..]);
    assert!(dfs.read_range("/r", 100, 5).unwrap().is_empty());

    let mut reader = dfs.open("/r").unwrap();
    reader.seek(SeekFrom::Start(5)).unwrap();
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest).unwrap();
    assert_eq!(rest, &content[5..]);
}

#[test]
fn namespace_image_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cluster = Arc::new(Cluster::new(Arc::new(ManualClock::new()), Duration::from_secs(5)));
    cluster.register_node(1).unwrap();
    cluster.register_node(1).unwrap();
    let store: Arc<dyn BlockStore> = Arc::new(DiskStore::new(dir.path().join("blocks")).unwrap());
    let config = DfsConfig {
        block_size: 3,
        ..DfsConfig::default()
    };
    let image = dir.path().join("namespace.json");
    {
        let dfs = Dfs::with_image(config, cluster.clone(), store.clone(), &image).unwrap();
        dfs.put("/keep", b"persisted bytes").unwrap();
    }
    let dfs = Dfs::with_image(config, cluster, store, &image).unwrap();
    assert_eq!(dfs.get("/keep").unwrap(), b"persisted bytes");
    let next = dfs.put("/new", b"x").unwrap().blocks[0].id;
    assert!(next.0 > 5);
}

#[test]
fn concurrent_puts_of_one_path_admit_exactly_one() {
    let (_, _, dfs) = setup(4, 8, 2);
    let dfs = Arc::new(dfs);
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let dfs = dfs.clone();
            std::thread::spawn(move || dfs.put("/race", format!("writer {i}").as_bytes()).is_ok())
        })
        .collect();
    let winners = handles.into_iter().map(|h| h.join().unwrap()).filter(|ok| *ok).count();
    assert_eq!(winners, 1);
}
