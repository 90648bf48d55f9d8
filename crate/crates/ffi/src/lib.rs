//! C ABI over the fusionnet library.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call returns
//! an [`FnStatus`]; the message of the last failure on the calling thread is
//! available through [`fn_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use fusionnet::mesh::{normalize_mesh, parse_off};
use fusionnet::models::{self, forward_multiview, Architecture};
use fusionnet::pipeline::{fuse_scores, FusionWeights, ScoreTransform};
use fusionnet::render::{make_camera_rig, render_view};
use fusionnet::transform::apply_rotation;
use fusionnet::voxel::{voxelize_surface, write_voxel_cache};
use fusionnet::{ClassScores, Error, Network, Orientation, Tensor, TriangleMesh, VoxelGrid};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    InvalidMesh = 4,
    Shape = 5,
    Weights = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

pub struct FnMesh(TriangleMesh);

pub struct FnVoxelGrid(VoxelGrid);

pub struct FnNetwork {
    net: Network<f32>,
    classes: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: FnStatus, message: impl Into<String>) -> FnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
    status
}

fn from_error(err: Error) -> FnStatus {
    let status = match &err {
        Error::Parse { .. } => FnStatus::Parse,
        Error::InvalidMesh(_) => FnStatus::InvalidMesh,
        Error::Shape(_) => FnStatus::Shape,
        Error::Weights(_) => FnStatus::Weights,
        Error::InvalidArgument(_) => FnStatus::InvalidArgument,
        _ => FnStatus::Internal,
    };
    fail(status, err.to_string())
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), FnStatus>) -> FnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            FnStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(FnStatus::Internal, "panic inside fusionnet"),
    }
}

fn check<T>(r: fusionnet::Result<T>) -> Result<T, FnStatus> {
    r.map_err(from_error)
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, FnStatus> {
    p.as_ref().ok_or_else(|| fail(FnStatus::NullPointer, "null handle"))
}

unsafe fn deref_mut<'a, T>(p: *mut T) -> Result<&'a mut T, FnStatus> {
    p.as_mut().ok_or_else(|| fail(FnStatus::NullPointer, "null handle"))
}

unsafe fn bytes<'a, T>(p: *const T, len: usize) -> Result<&'a [T], FnStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(FnStatus::NullPointer, "null buffer"));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, len: usize) -> Result<&'a mut [T], FnStatus> {
    if p.is_null() {
        return Err(fail(FnStatus::NullPointer, "null output buffer"));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn store<T>(dst: *mut *mut T, value: T) -> Result<(), FnStatus> {
    if dst.is_null() {
        return Err(fail(FnStatus::NullPointer, "null output handle"));
    }
    *dst = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `cap`) and returns the full message length.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn fn_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses an OFF file held in memory.
///
/// # Safety
/// `data` must be valid for `len` bytes; `mesh_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_mesh_parse_off(data: *const u8, len: usize, mesh_out: *mut *mut FnMesh) -> FnStatus {
    guard(|| {
        let mesh = check(parse_off(bytes(data, len)?))?;
        store(mesh_out, FnMesh(mesh))
    })
}

/// # Safety
/// `mesh` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fn_mesh_free(mesh: *mut FnMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_mesh_counts(mesh: *const FnMesh, vertices: *mut usize, faces: *mut usize) -> FnStatus {
    guard(|| {
        let m = &deref(mesh)?.0;
        *deref_mut(vertices)? = m.vertex_count();
        *deref_mut(faces)? = m.face_count();
        Ok(())
    })
}

/// Centers the mesh and scales its longest side to `1 - 2 * padding`.
///
/// # Safety
/// `mesh` must be a live handle; `mesh_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_mesh_normalize(mesh: *const FnMesh, padding: f64, mesh_out: *mut *mut FnMesh) -> FnStatus {
    guard(|| {
        let m = check(normalize_mesh(&deref(mesh)?.0, padding))?;
        store(mesh_out, FnMesh(m))
    })
}

/// Rotates by polar angle `theta` and azimuth `phi` (radians).
///
/// # Safety
/// `mesh` must be a live handle; `mesh_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_mesh_rotate(
    mesh: *const FnMesh,
    theta: f64,
    phi: f64,
    mesh_out: *mut *mut FnMesh,
) -> FnStatus {
    guard(|| {
        let o = check(Orientation::new(theta, phi))?;
        store(mesh_out, FnMesh(apply_rotation(&deref(mesh)?.0, o)))
    })
}

/// Surface occupancy grid of a normalized mesh.
///
/// # Safety
/// `mesh` must be a live handle; `grid_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_voxelize(
    mesh: *const FnMesh,
    resolution: usize,
    grid_out: *mut *mut FnVoxelGrid,
) -> FnStatus {
    guard(|| {
        let g = check(voxelize_surface(&deref(mesh)?.0, resolution))?;
        store(grid_out, FnVoxelGrid(g))
    })
}

/// # Safety
/// `grid` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fn_grid_free(grid: *mut FnVoxelGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// # Safety
/// `grid` must be a live handle; `resolution` and `occupied` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_grid_info(
    grid: *const FnVoxelGrid,
    resolution: *mut usize,
    occupied: *mut usize,
) -> FnStatus {
    guard(|| {
        let g = &deref(grid)?.0;
        *deref_mut(resolution)? = g.resolution();
        *deref_mut(occupied)? = g.occupied_count();
        Ok(())
    })
}

/// Serializes the grid in the voxel cache format. `needed` receives the
/// byte count; with a short or null `buf` the call returns
/// `FN_STATUS_BUFFER_TOO_SMALL` and writes nothing else.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes; `needed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_grid_cache_bytes(
    grid: *const FnVoxelGrid,
    buf: *mut u8,
    cap: usize,
    needed: *mut usize,
) -> FnStatus {
    guard(|| {
        let encoded = check(write_voxel_cache(&deref(grid)?.0))?;
        *deref_mut(needed)? = encoded.len();
        if buf.is_null() || cap < encoded.len() {
            return Err(fail(FnStatus::BufferTooSmall, format!("need {} bytes, got {cap}", encoded.len())));
        }
        out(buf, encoded.len())?.copy_from_slice(&encoded);
        Ok(())
    })
}

/// Renders view `view` (0..20) of a normalized mesh into `pixels`, which
/// must hold `image_size * image_size` values in [0, 1], row 0 at the top.
///
/// # Safety
/// `mesh` must be a live handle; `pixels` must be valid for `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn fn_render_view(
    mesh: *const FnMesh,
    image_size: usize,
    view: usize,
    pixels: *mut f32,
    cap: usize,
) -> FnStatus {
    guard(|| {
        let rig = check(make_camera_rig(image_size))?;
        let img = check(render_view(&deref(mesh)?.0, &rig, view))?;
        if cap < img.pixels.len() {
            return Err(fail(FnStatus::BufferTooSmall, format!("need {} pixels, got {cap}", img.pixels.len())));
        }
        out(pixels, img.pixels.len())?.copy_from_slice(&img.pixels);
        Ok(())
    })
}

/// Builds a freshly initialized network. `architecture` is one of
/// "vcnn1", "vcnn2" or "mvnet".
///
/// # Safety
/// `architecture` must be a NUL-terminated string; `net_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_network_build(
    architecture: *const c_char,
    classes: usize,
    resolution: usize,
    image_size: usize,
    seed: u64,
    net_out: *mut *mut FnNetwork,
) -> FnStatus {
    guard(|| {
        if architecture.is_null() {
            return Err(fail(FnStatus::NullPointer, "null architecture name"));
        }
        let name = CStr::from_ptr(architecture)
            .to_str()
            .map_err(|_| fail(FnStatus::InvalidArgument, "architecture name is not UTF-8"))?;
        let arch: Architecture = check(name.parse())?;
        let spec = check(models::build(arch, classes, resolution, image_size))?;
        let net = check(spec.instantiate::<f32>(seed))?;
        store(net_out, FnNetwork { net, classes })
    })
}

/// # Safety
/// `net` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fn_network_free(net: *mut FnNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of trainable parameters, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fn_network_param_count(net: *const FnNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.param_count())
}

/// Number of input values per view (or per voxel grid).
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fn_network_input_len(net: *const FnNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.input_shape().iter().product())
}

/// Replaces the parameters with a weights file held in memory.
///
/// # Safety
/// `net` must be a live handle; `data` must be valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn fn_network_load_weights(net: *mut FnNetwork, data: *const u8, len: usize) -> FnStatus {
    guard(|| check(deref_mut(net)?.net.load_weights(bytes(data, len)?)))
}

/// Class scores for one object given `views` consecutive inputs of
/// `fn_network_input_len` values each. Volumetric networks take one view.
///
/// # Safety
/// `net` must be a live handle; `input` must hold `views * input_len`
/// floats and `scores` must be valid for `classes` floats.
#[no_mangle]
pub unsafe extern "C" fn fn_network_forward(
    net: *mut FnNetwork,
    input: *const f32,
    views: usize,
    scores: *mut f32,
    classes: usize,
) -> FnStatus {
    guard(|| {
        let n = deref_mut(net)?;
        if views == 0 {
            return Err(fail(FnStatus::InvalidArgument, "view count must be at least 1"));
        }
        if classes < n.classes {
            return Err(fail(FnStatus::BufferTooSmall, format!("need {} scores, got {classes}", n.classes)));
        }
        let shape = n.net.input_shape().to_vec();
        let item: usize = shape.iter().product();
        let data = bytes(input, views * item)?;
        let tensors =
            data.chunks(item).map(|c| Tensor::from_vec(&shape, c.to_vec())).collect::<fusionnet::Result<Vec<_>>>();
        let result = check(forward_multiview(&mut n.net, &check(tensors)?))?;
        for (d, s) in out(scores, n.classes)?.iter_mut().zip(result) {
            *d = s as f32;
        }
        Ok(())
    })
}

/// Weighted score fusion for one object: `scores` is a row-major
/// `[components x classes]` matrix. Writes the predicted class index.
///
/// # Safety
/// `scores` must hold `components * classes` floats, `weights` must hold
/// `components` floats and `predicted` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fn_fuse(
    scores: *const f32,
    components: usize,
    classes: usize,
    weights: *const f64,
    softmax: bool,
    predicted: *mut usize,
) -> FnStatus {
    guard(|| {
        if components == 0 || classes == 0 {
            return Err(fail(FnStatus::InvalidArgument, "need at least one component and class"));
        }
        let s = bytes(scores, components * classes)?;
        let w = bytes(weights, components)?;
        let names: Vec<String> = (0..components).map(|c| format!("c{c}")).collect();
        let parts: Vec<Vec<ClassScores>> = s
            .chunks(classes)
            .zip(&names)
            .map(|(row, name)| {
                vec![ClassScores {
                    model_id: "object".into(),
                    network: name.clone(),
                    scores: row.iter().map(|&v| v as f64).collect(),
                }]
            })
            .collect();
        let fw = FusionWeights { components: names, weights: w.to_vec() };
        let transform = if softmax { ScoreTransform::Softmax } else { ScoreTransform::Raw };
        let fused = check(fuse_scores(&parts, &fw, transform))?;
        *deref_mut(predicted)? = fused[0].1;
        Ok(())
    })
}
