use std::ffi::{c_char, CStr, CString};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::ptr;

use mementomap_ffi::*;

const SAMPLE_MAP: &str = "!meta {type: \"MementoMap\"}\n\
com,* 206\n\
org,arxiv)/ 100\n\
org,arxiv)/* 2500~/900\n\
org,arxiv)/pdf/* 0\n\
uk,co,bbc)/images/* 300+/20-\n\
uk,co,bbc)/news/* 54321/20000\n";

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        mm_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn lookup(map: *mut MmMap, uri: &str) -> (MmLookupResult, String) {
    let mut out = std::mem::MaybeUninit::<MmLookupResult>::uninit();
    let mut key = vec![0 as c_char; 64];
    let status = unsafe { mm_map_lookup(map, c(uri).as_ptr(), out.as_mut_ptr(), key.as_mut_ptr(), key.len()) };
    assert_eq!(status, MmStatus::Ok, "{}", last_error());
    let out = unsafe { out.assume_init() };
    let key = unsafe { CStr::from_ptr(key.as_ptr()) }.to_string_lossy().into_owned();
    (out, key)
}

#[test]
fn lookup_through_handle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sample.ukvs");
    fs::write(&path, SAMPLE_MAP).unwrap();
    let mut map: *mut MmMap = ptr::null_mut();
    assert_eq!(unsafe { mm_map_open(c(path.to_str().unwrap()).as_ptr(), &mut map) }, MmStatus::Ok);

    let (r, key) = lookup(map, "http://arxiv.org/");
    assert_eq!((r.disposition, r.urim, key.as_str()), (MmDisposition::Present, 100, "org,arxiv)/"));
    assert_eq!(r.key_len, key.len());

    let (r, key) = lookup(map, "http://arxiv.org/pdf/1");
    assert_eq!((r.disposition, key.as_str()), (MmDisposition::AbsentExplicit, "org,arxiv)/pdf/*"));

    let (r, _) = lookup(map, "http://example.net/x");
    assert_eq!(r.disposition, MmDisposition::AbsentNoMatch);

    let (r, _) = lookup(map, "http://bbc.co.uk/images/a.png");
    assert_eq!((r.urim, r.urim_modifier, r.has_urir, r.urir, r.urir_modifier), (300, MmModifier::AtLeast, true, 20, MmModifier::AtMost));
    assert!(r.probes >= 1);

    let mut out = std::mem::MaybeUninit::<MmLookupResult>::uninit();
    let status = unsafe { mm_map_lookup(map, c("not a uri").as_ptr(), out.as_mut_ptr(), ptr::null_mut(), 0) };
    assert_eq!(status, MmStatus::MalformedUri);
    assert!(!last_error().is_empty());

    unsafe { mm_map_close(map) };
}

#[test]
fn open_errors() {
    let mut map: *mut MmMap = ptr::null_mut();
    assert_eq!(unsafe { mm_map_open(c("/nonexistent/map.ukvs").as_ptr(), &mut map) }, MmStatus::Io);
    assert!(map.is_null());
    assert_eq!(unsafe { mm_map_open(ptr::null(), &mut map) }, MmStatus::InvalidArgument);
    assert_eq!(last_error(), "path is null");
    let needed = unsafe { mm_last_error_message(ptr::null_mut(), 0) };
    assert_eq!(needed, "path is null".len());
}

#[test]
fn key_functions_and_buffers() {
    let mut buf = vec![0 as c_char; 64];
    let mut needed = 0usize;
    let uri = c("http://www.Example.com:80/a/b/?z=1&a=2#frag");
    assert_eq!(unsafe { mm_surtify(uri.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut needed) }, MmStatus::Ok);
    let surt = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned();
    assert_eq!(surt, "com,example)/a/b?a=2&z=1");
    assert_eq!(needed, surt.len());

    assert_eq!(unsafe { mm_hxpx_key(uri.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut needed) }, MmStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "com,example)/a/b");

    let mut small = vec![0 as c_char; 4];
    assert_eq!(unsafe { mm_hxpx_key(uri.as_ptr(), small.as_mut_ptr(), small.len(), &mut needed) }, MmStatus::BufferTooSmall);
    assert_eq!(needed, "com,example)/a/b".len());

    let mut q = 0.0;
    assert_eq!(unsafe { mm_redq(10, 30, 40, &mut q) }, MmStatus::Ok);
    assert!((q - 0.5).abs() < 1e-12);
    assert_eq!(unsafe { mm_redq(10, 5, 40, &mut q) }, MmStatus::Domain);
}

#[test]
fn compact_with_table() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.ukvs");
    let output = dir.path().join("out.ukvs");
    let body: String = (0..5).map(|i| format!("com,example)/p{i} 2\n")).collect();
    fs::write(&input, body).unwrap();
    let table = c(r#"{"host": [], "path": [null, 3]}"#);
    let mut report = MmCompactReport::default();
    let status = unsafe {
        mm_compact_file(
            c(input.to_str().unwrap()).as_ptr(),
            c(output.to_str().unwrap()).as_ptr(),
            0.0,
            0.0,
            table.as_ptr(),
            &mut report,
        )
    };
    assert_eq!(status, MmStatus::Ok, "{}", last_error());
    assert_eq!((report.lines_in, report.lines_out, report.rollups), (5, 1, 1));
    assert_eq!(fs::read_to_string(&output).unwrap(), "com,example)/* 10\n");

    let bad = c("{");
    let status = unsafe { mm_compact_file(c("x").as_ptr(), c("y").as_ptr(), 0.0, 0.0, bad.as_ptr(), ptr::null_mut()) };
    assert_eq!(status, MmStatus::InvalidArgument);
}

#[test]
fn header_declares_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mementomap.h");
    let text = fs::read_to_string(&header).unwrap();
    for name in ["mm_map_open", "mm_map_lookup", "mm_map_close", "mm_surtify", "mm_hxpx_key", "mm_compact_file", "mm_redq", "mm_last_error_message", "typedef struct MmMap MmMap"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    fs::write(&src, "#include \"mementomap.h\"\nint main(void) { MmMap *m = 0; return mm_map_open(\"x\", &m) == MM_STATUS_OK; }\n").unwrap();
    match Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("cc not found; skipping header compile check"),
    }
}
