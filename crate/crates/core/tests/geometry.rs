mod common;

use common::*;
use haircard::cardgeom::{bishop_frames, cross_card, fit_cluster, section_indices};
use haircard::hairio::Strand;
use haircard::math::{any_perpendicular, Vec3};
use rand::Rng;

fn ok(c: Check) {
    match c {
        Ok(s) => println!("{s}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn frames_are_orthonormal() {
    ok(check_frame_orthonormality());
}

#[test]
fn straight_strand_frames_are_constant() {
    ok(check_straight_frames());
}

#[test]
fn closest_point_matches_dense_sampling() {
    ok(check_closest_point_oracle());
}

#[test]
fn planar_clusters_roundtrip() {
    ok(check_roundtrip());
}

#[test]
fn stride_keeps_endpoints() {
    ok(check_stride());
}

/// Rodrigues rotation, written out independently of the library.
fn rodrigues(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    let k = axis.normalize();
    v * angle.cos() + k.cross(&v) * angle.sin() + k * k.dot(&v) * (1.0 - angle.cos())
}

#[test]
fn helix_transport_matches_rotation_chain() {
    let s = helix(80, 0.3, 0.04, 2.5);
    let tangents: Vec<Vec3> = s.samples.windows(2).map(|w| (w[1] - w[0]).normalize()).collect();
    let n0 = any_perpendicular(&tangents[0]);
    let f = bishop_frames(&s, &n0).unwrap();
    let mut n = n0;
    for j in 1..tangents.len() {
        let (a, b) = (tangents[j - 1], tangents[j]);
        let axis = a.cross(&b);
        if axis.norm() > 1e-15 {
            n = rodrigues(n, axis, a.dot(&b).clamp(-1.0, 1.0).acos());
        }
        assert!((f.normals[j] - n).norm() < 1e-9, "sample {j}: {:?} vs {:?}", f.normals[j], n);
    }
    assert!(frame_orthonormality_error(&f) < 1e-9);
}

#[test]
fn card_widths_are_the_member_envelope() {
    let (hair, cluster, card) = wig_card(2, 8);
    let t0 = (cluster.mean_strand.samples[1] - cluster.mean_strand.samples[0]).normalize();
    let f = bishop_frames(&cluster.mean_strand, &any_perpendicular(&t0)).unwrap();
    let w = haircard::cardgeom::card_widths(&cluster, &hair, &f);
    for j in 0..w.len() {
        let mut brute = 0.0f64;
        for &i in &cluster.member_indices {
            let d = hair.strands[i].samples[j] - cluster.mean_strand.samples[j];
            brute = brute.max(d.dot(&f.binormals[j]).abs());
        }
        assert_eq!(w[j], brute);
    }
    assert_eq!(card.sections(), 9);
}

#[test]
fn centerline_is_the_downsampled_mean() {
    for (ci, quads) in [(0, 8), (1, 4), (5, 31)] {
        let (hair, cluster, card) = wig_card(ci, quads);
        let r = hair.bounds.radius;
        let idx = section_indices(cluster.mean_strand.len(), quads).unwrap();
        assert_eq!(card.section_samples, idx);
        for (k, c) in card.centerline().iter().enumerate() {
            assert!((c - cluster.mean_strand.samples[idx[k]]).norm() <= 1e-12 * r);
        }
    }
}

#[test]
fn orientation_search_finds_the_plane() {
    ok(orientation_criterion());
}

#[test]
fn crossed_card_is_perpendicular() {
    let (hair, cluster, _) = wig_card(3, 8);
    let fitted = fit_cluster(3, &cluster, &hair, 8, 36, 1e-3, true).unwrap();
    assert_eq!(fitted.len(), 2);
    let (a, b) = (&fitted[0], &fitted[1]);
    assert!(!a.crossed && b.crossed);
    assert_eq!(a.geometry.centerline().len(), b.geometry.centerline().len());
    for k in 0..a.geometry.sections() {
        let da = a.geometry.plus(k) - a.geometry.minus(k);
        let db = b.geometry.plus(k) - b.geometry.minus(k);
        assert!(da.normalize().dot(&db.normalize()).abs() < 1e-9);
        assert!((a.geometry.centerline()[k] - b.geometry.centerline()[k]).norm() < 1e-12);
        assert!((da.norm() - db.norm()).abs() < 1e-12);
    }
    // Two quarter turns reverse the frame.
    let twice = a.frames.quarter_turn().quarter_turn();
    for j in 0..twice.len() {
        assert_eq!(twice.normals[j], -a.frames.normals[j]);
        assert_eq!(twice.binormals[j], -a.frames.binormals[j]);
    }
    let again = cross_card(&a.geometry, &cluster.mean_strand, &a.frames, &a.widths, 1e-3).unwrap();
    assert_eq!(again, b.geometry);
}

#[test]
fn degenerate_strands_are_rejected() {
    let s = Strand::new(vec![Vec3::zeros(); 4]);
    assert!(bishop_frames(&s, &Vec3::x()).is_err());
    assert!(section_indices(4, 4).is_err());
    assert!(section_indices(4, 0).is_err());
    let mut g = rng(3);
    let dir = unit_vector(&mut g);
    let s = Strand::new((0..5).map(|i| dir * (i as f64 + g.gen_range(0.1..0.2))).collect());
    assert!(bishop_frames(&s, &any_perpendicular(&dir)).is_ok());
}
