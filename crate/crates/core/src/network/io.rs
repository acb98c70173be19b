use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::{Link, Network, NodeId, OdPair, Point};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct LinkRow {
    link_id: u32,
    from: u32,
    to: u32,
    length_km: f64,
    ffs_car: f64,
    ffs_truck: f64,
    cap_car: f64,
    cap_truck: f64,
    jam_car: f64,
    jam_truck: f64,
    allows_parking: String,
    curb_capacity: f64,
    is_connector: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct OdRow {
    origin: u32,
    destination: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRow {
    node_id: u32,
    x: f64,
    y: f64,
}

fn parse_bool(s: &str, location: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Ok(true),
        "0" | "false" | "no" | "n" | "" => Ok(false),
        other => Err(Error::parse(location, format!("expected boolean, got `{other}`"))),
    }
}

fn open(path: &FsPath) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn rows<T: for<'de> Deserialize<'de>>(path: &FsPath) -> Result<Vec<T>> {
    let mut rdr = open(path)?;
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 2), e)))
        .collect()
}

/// Loads a link CSV plus an OD CSV and validates the result.
pub fn load_network(network_file: &FsPath, od_file: &FsPath) -> Result<Network> {
    let link_rows: Vec<LinkRow> = rows(network_file)?;
    let mut links = Vec::with_capacity(link_rows.len());
    for (i, r) in link_rows.into_iter().enumerate() {
        let loc = format!("{}:{}", network_file.display(), i + 2);
        links.push(Link {
            id: r.link_id,
            from: r.from,
            to: r.to,
            length_km: r.length_km,
            free_flow_speed: [r.ffs_car, r.ffs_truck],
            capacity: [r.cap_car, r.cap_truck],
            jam_density: [r.jam_car, r.jam_truck],
            allows_parking: parse_bool(&r.allows_parking, &loc)?,
            curb_capacity: r.curb_capacity,
            is_connector: parse_bool(&r.is_connector, &loc)?,
        });
    }
    let od_pairs = rows::<OdRow>(od_file)?
        .into_iter()
        .map(|r| OdPair {
            origin: r.origin,
            destination: r.destination,
        })
        .collect();
    Network::new(links, od_pairs)
}

pub fn load_node_coords(path: &FsPath) -> Result<BTreeMap<NodeId, Point>> {
    let mut out = BTreeMap::new();
    for (i, r) in rows::<NodeRow>(path)?.into_iter().enumerate() {
        if !(r.x.is_finite() && r.y.is_finite()) {
            return Err(Error::parse(
                format!("{}:{}", path.display(), i + 2),
                "non-finite coordinate",
            ));
        }
        out.insert(r.node_id, [r.x, r.y]);
    }
    Ok(out)
}

fn writer(path: &FsPath) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &FsPath) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e))
}

pub fn write_network(net: &Network, path: &FsPath) -> Result<()> {
    let mut w = writer(path)?;
    for l in net.links() {
        w.serialize(LinkRow {
            link_id: l.id,
            from: l.from,
            to: l.to,
            length_km: l.length_km,
            ffs_car: l.free_flow_speed[0],
            ffs_truck: l.free_flow_speed[1],
            cap_car: l.capacity[0],
            cap_truck: l.capacity[1],
            jam_car: l.jam_density[0],
            jam_truck: l.jam_density[1],
            allows_parking: (l.allows_parking as u8).to_string(),
            curb_capacity: l.curb_capacity,
            is_connector: (l.is_connector as u8).to_string(),
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_od_pairs(net: &Network, path: &FsPath) -> Result<()> {
    let mut w = writer(path)?;
    for od in net.od_pairs() {
        w.serialize(OdRow {
            origin: od.origin,
            destination: od.destination,
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_node_coords(net: &Network, path: &FsPath) -> Result<()> {
    let mut w = writer(path)?;
    for (&node_id, &[x, y]) in net.coords() {
        w.serialize(NodeRow { node_id, x, y }).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::toy_network;

    #[test]
    fn round_trip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let net = toy_network();
        let (n, o) = (dir.path().join("net.csv"), dir.path().join("od.csv"));
        write_network(&net, &n).unwrap();
        write_od_pairs(&net, &o).unwrap();
        let back = load_network(&n, &o).unwrap();
        assert_eq!(back.links(), net.links());
        assert_eq!(back.od_pairs(), net.od_pairs());

        write_network(&back, &n).unwrap();
        let again = load_network(&n, &o).unwrap();
        assert_eq!(again, back);
    }

    #[test]
    fn header_and_row_one() {
        let dir = tempfile::tempdir().unwrap();
        let n = dir.path().join("net.csv");
        write_network(&toy_network(), &n).unwrap();
        let text = std::fs::read_to_string(&n).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "link_id,from,to,length_km,ffs_car,ffs_truck,cap_car,cap_truck,jam_car,jam_truck,allows_parking,curb_capacity,is_connector"
        );
    }

    #[test]
    fn malformed_row_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let n = dir.path().join("net.csv");
        let o = dir.path().join("od.csv");
        std::fs::write(
            &n,
            "link_id,from,to,length_km,ffs_car,ffs_truck,cap_car,cap_truck,jam_car,jam_truck,allows_parking,curb_capacity,is_connector\n1,1,2,abc,50,40,6000,3600,540,240,0,0,0\n",
        )
        .unwrap();
        std::fs::write(&o, "origin,destination\n1,2\n").unwrap();
        assert!(matches!(load_network(&n, &o), Err(Error::Parse { .. })));
    }

    #[test]
    fn dangling_od_node_is_topology_error() {
        let dir = tempfile::tempdir().unwrap();
        let n = dir.path().join("net.csv");
        let o = dir.path().join("od.csv");
        write_network(&toy_network(), &n).unwrap();
        std::fs::write(&o, "origin,destination\n101,999\n").unwrap();
        assert!(matches!(load_network(&n, &o), Err(Error::Topology(_))));
    }

    #[test]
    fn nonpositive_speed_is_invariant_error() {
        let dir = tempfile::tempdir().unwrap();
        let n = dir.path().join("net.csv");
        let o = dir.path().join("od.csv");
        std::fs::write(
            &n,
            "link_id,from,to,length_km,ffs_car,ffs_truck,cap_car,cap_truck,jam_car,jam_truck,allows_parking,curb_capacity,is_connector\n1,1,2,1,0,40,6000,3600,540,240,0,0,0\n",
        )
        .unwrap();
        std::fs::write(&o, "origin,destination\n1,2\n").unwrap();
        assert!(matches!(load_network(&n, &o), Err(Error::Invariant(_))));
    }
}
