use std::ffi::CString;
use std::process::Command;
use std::ptr;

use fusionnet::mesh::{shapes, write_off};
use fusionnet::voxel::{read_voxel_cache, voxelize_surface};
use fusionnet_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { fn_last_error(buf.as_mut_ptr().cast(), buf.len()) };
    String::from_utf8_lossy(&buf[..n.min(255)]).into_owned()
}

fn parse(bytes: &[u8]) -> *mut FnMesh {
    let mut mesh = ptr::null_mut();
    assert_eq!(unsafe { fn_mesh_parse_off(bytes.as_ptr(), bytes.len(), &mut mesh) }, FnStatus::Ok);
    mesh
}

fn normalized_box() -> *mut FnMesh {
    let raw = parse(&write_off(&shapes::cuboid([2.0, 1.0, 0.5])));
    let mut norm = ptr::null_mut();
    assert_eq!(unsafe { fn_mesh_normalize(raw, 0.05, &mut norm) }, FnStatus::Ok);
    unsafe { fn_mesh_free(raw) };
    norm
}

#[test]
fn mesh_round_trip_and_parse_error() {
    let mesh = parse(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
    let (mut v, mut f) = (0, 0);
    assert_eq!(unsafe { fn_mesh_counts(mesh, &mut v, &mut f) }, FnStatus::Ok);
    assert_eq!((v, f), (3, 1));
    unsafe { fn_mesh_free(mesh) };

    let bad = b"OFF\n3 1 0\n0 0 0\n";
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fn_mesh_parse_off(bad.as_ptr(), bad.len(), &mut out) }, FnStatus::Parse);
    assert!(out.is_null());
    assert!(last_error().contains("line"), "{}", last_error());
}

#[test]
fn null_handles_are_reported() {
    let (mut v, mut f) = (0, 0);
    assert_eq!(unsafe { fn_mesh_counts(ptr::null(), &mut v, &mut f) }, FnStatus::NullPointer);
    assert_eq!(last_error(), "null handle");
    unsafe {
        fn_mesh_free(ptr::null_mut());
        fn_grid_free(ptr::null_mut());
        fn_network_free(ptr::null_mut());
    }
    assert_eq!(unsafe { fn_network_param_count(ptr::null()) }, 0);
}

#[test]
fn voxelize_matches_library_and_cache_bytes() {
    let mesh = normalized_box();
    let mut grid = ptr::null_mut();
    assert_eq!(unsafe { fn_voxelize(mesh, 16, &mut grid) }, FnStatus::Ok);
    let (mut res, mut occ) = (0, 0);
    assert_eq!(unsafe { fn_grid_info(grid, &mut res, &mut occ) }, FnStatus::Ok);

    let m = fusionnet::mesh::normalize_mesh(&shapes::cuboid([2.0, 1.0, 0.5]), 0.05).unwrap();
    let want = voxelize_surface(&m, 16).unwrap();
    assert_eq!((res, occ), (16, want.occupied_count()));

    let mut needed = 0;
    assert_eq!(unsafe { fn_grid_cache_bytes(grid, ptr::null_mut(), 0, &mut needed) }, FnStatus::BufferTooSmall);
    let mut buf = vec![0u8; needed];
    assert_eq!(unsafe { fn_grid_cache_bytes(grid, buf.as_mut_ptr(), buf.len(), &mut needed) }, FnStatus::Ok);
    assert_eq!(read_voxel_cache(&buf).unwrap(), want);
    unsafe {
        fn_grid_free(grid);
        fn_mesh_free(mesh);
    }
}

#[test]
fn rotate_rejects_out_of_range_angles() {
    let mesh = normalized_box();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fn_mesh_rotate(mesh, 4.0, 0.0, &mut out) }, FnStatus::InvalidArgument);
    assert_eq!(unsafe { fn_mesh_rotate(mesh, 1.0, 2.0, &mut out) }, FnStatus::Ok);
    unsafe {
        fn_mesh_free(out);
        fn_mesh_free(mesh);
    }
}

#[test]
fn render_and_multiview_forward() {
    let mesh = normalized_box();
    let size = 32;
    let mut views = vec![0f32; 0];
    let mut pixels = vec![0f32; size * size];
    assert_eq!(unsafe { fn_render_view(mesh, size, 0, pixels.as_mut_ptr(), 10) }, FnStatus::BufferTooSmall);
    for v in 0..3 {
        assert_eq!(unsafe { fn_render_view(mesh, size, v, pixels.as_mut_ptr(), pixels.len()) }, FnStatus::Ok);
        assert!(pixels.iter().any(|&p| p > 0.0));
        for _ in 0..3 {
            views.extend_from_slice(&pixels);
        }
    }

    let name = CString::new("mvnet").unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { fn_network_build(name.as_ptr(), 5, 30, size, 1, &mut net) }, FnStatus::Ok);
    assert_eq!(unsafe { fn_network_input_len(net) }, 3 * size * size);
    let mut a = [0f32; 5];
    let mut b = [0f32; 5];
    assert_eq!(unsafe { fn_network_forward(net, views.as_ptr(), 3, a.as_mut_ptr(), 5) }, FnStatus::Ok);
    // reversed view order gives the same scores
    let item = 3 * size * size;
    let reversed: Vec<f32> = views.chunks(item).rev().flatten().copied().collect();
    assert_eq!(unsafe { fn_network_forward(net, reversed.as_ptr(), 3, b.as_mut_ptr(), 5) }, FnStatus::Ok);
    assert_eq!(a, b);
    assert_eq!(unsafe { fn_network_forward(net, views.as_ptr(), 3, b.as_mut_ptr(), 4) }, FnStatus::BufferTooSmall);
    unsafe {
        fn_network_free(net);
        fn_mesh_free(mesh);
    }
}

#[test]
fn network_counts_and_weights() {
    let name = CString::new("vcnn1").unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { fn_network_build(name.as_ptr(), 40, 30, 64, 0, &mut net) }, FnStatus::Ok);
    assert_eq!(unsafe { fn_network_param_count(net) }, 3_452_008);
    unsafe { fn_network_free(net) };

    let bogus = CString::new("resnet").unwrap();
    assert_eq!(unsafe { fn_network_build(bogus.as_ptr(), 4, 30, 64, 0, &mut net) }, FnStatus::InvalidArgument);

    let small = fusionnet::models::vcnn1_with(fusionnet::models::Vcnn1Config {
        resolution: 18,
        filters: 2,
        hidden: 4,
        class_count: 3,
    })
    .instantiate::<f32>(9)
    .unwrap()
    .save_weights();
    let reference = fusionnet::models::build_vcnn1(3).instantiate::<f32>(7).unwrap();
    let full = reference.save_weights();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { fn_network_build(name.as_ptr(), 3, 30, 64, 0, &mut handle) }, FnStatus::Ok);
    assert_eq!(unsafe { fn_network_load_weights(handle, small.as_ptr(), small.len()) }, FnStatus::Weights);
    assert!(last_error().contains("layer 0.conv.weight"), "{}", last_error());
    assert_eq!(unsafe { fn_network_load_weights(handle, full.as_ptr(), full.len()) }, FnStatus::Ok);

    let input: Vec<f32> = (0..27_000).map(|i| ((i * 7) % 5 == 0) as u8 as f32).collect();
    let mut got = [0f32; 3];
    assert_eq!(unsafe { fn_network_forward(handle, input.as_ptr(), 1, got.as_mut_ptr(), 3) }, FnStatus::Ok);
    let mut reference = reference;
    let x = fusionnet::Tensor::from_vec(&[30, 30, 30], input).unwrap();
    let want = fusionnet::models::forward_multiview(&mut reference, &[x]).unwrap();
    assert_eq!(got.to_vec(), want.iter().map(|&v| v as f32).collect::<Vec<_>>());
    unsafe { fn_network_free(handle) };
}

#[test]
fn fuse_weighted_scores() {
    // component 0 prefers class 0 weakly, component 1 prefers class 1 strongly
    let scores = [0.6f32, 0.4, 0.1, 0.9];
    let mut pred = 99;
    let w = [0.5, 0.5];
    assert_eq!(unsafe { fn_fuse(scores.as_ptr(), 2, 2, w.as_ptr(), false, &mut pred) }, FnStatus::Ok);
    assert_eq!(pred, 1);
    let w = [1.0, 0.0];
    assert_eq!(unsafe { fn_fuse(scores.as_ptr(), 2, 2, w.as_ptr(), false, &mut pred) }, FnStatus::Ok);
    assert_eq!(pred, 0);
    let w = [0.7, 0.7];
    assert_eq!(unsafe { fn_fuse(scores.as_ptr(), 2, 2, w.as_ptr(), false, &mut pred) }, FnStatus::InvalidArgument);
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/fusionnet.h");
    let Ok(status) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).status() else {
        eprintln!("cc not available, skipping");
        return;
    };
    assert!(status.success());
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["fn_mesh_parse_off", "fn_voxelize", "fn_render_view", "fn_network_forward", "fn_fuse", "fn_last_error"] {
        assert!(text.contains(f), "{f} missing from header");
    }
}
