//! Content-addressed blob files under `<data_dir>/objects/ab/abcdef...`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use qdh_core::objects::BlobStore;

#[derive(Debug, Clone)]
pub struct FsBlobStore {
    root: PathBuf,
}

impl FsBlobStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(FsBlobStore { root })
    }

    pub fn path_of(&self, checksum: &str) -> PathBuf {
        let shard = checksum.get(..2).unwrap_or("xx");
        self.root.join(shard).join(checksum)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

fn valid_checksum(checksum: &str) -> bool {
    checksum.len() >= 2 && checksum.bytes().all(|b| b.is_ascii_hexdigit())
}

impl BlobStore for FsBlobStore {
    type Error = io::Error;

    fn put_blob(&mut self, checksum: &str, content: &[u8]) -> io::Result<()> {
        if !valid_checksum(checksum) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "checksum is not hex"));
        }
        let path = self.path_of(checksum);
        if path.exists() {
            return Ok(());
        }
        let dir = path.parent().expect("sharded path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{checksum}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(content)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)
    }

    fn get_blob(&self, checksum: &str) -> io::Result<Option<Vec<u8>>> {
        if !valid_checksum(checksum) {
            return Ok(None);
        }
        match fs::read(self.path_of(checksum)) {
            Ok(c) => Ok(Some(c)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}
