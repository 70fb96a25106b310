//! WGS84 <-> UTM through the Krüger series (sixth order in the third flattening).

use std::f64::consts::PI;

use crate::error::{FedmapError, Result};

const A: f64 = 6_378_137.0;
const F: f64 = 1.0 / 298.257_223_563;
const K0: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;
const FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtmCoord {
    pub easting: f64,
    pub northing: f64,
    pub zone: u8,
    pub north: bool,
}

struct Series {
    e: f64,
    rect_a: f64,
    alpha: [f64; 6],
    beta: [f64; 6],
}

fn series() -> Series {
    let n = F / (2.0 - F);
    let (n2, n3, n4, n5, n6) = (n * n, n.powi(3), n.powi(4), n.powi(5), n.powi(6));
    let e = (F * (2.0 - F)).sqrt();
    let rect_a = A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
    let alpha = [
        n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0 + 41.0 * n4 / 180.0 - 127.0 * n5 / 288.0
            + 7891.0 * n6 / 37800.0,
        13.0 * n2 / 48.0 - 3.0 * n3 / 5.0 + 557.0 * n4 / 1440.0 + 281.0 * n5 / 630.0
            - 1_983_433.0 * n6 / 1_935_360.0,
        61.0 * n3 / 240.0 - 103.0 * n4 / 140.0 + 15061.0 * n5 / 26880.0 + 167_603.0 * n6 / 181_440.0,
        49561.0 * n4 / 161_280.0 - 179.0 * n5 / 168.0 + 6_601_661.0 * n6 / 7_257_600.0,
        34729.0 * n5 / 80640.0 - 3_418_889.0 * n6 / 1_995_840.0,
        212_378_941.0 * n6 / 319_334_400.0,
    ];
    let beta = [
        n / 2.0 - 2.0 * n2 / 3.0 + 37.0 * n3 / 96.0 - n4 / 360.0 - 81.0 * n5 / 512.0
            + 96199.0 * n6 / 604_800.0,
        n2 / 48.0 + n3 / 15.0 - 437.0 * n4 / 1440.0 + 46.0 * n5 / 105.0 - 1_118_711.0 * n6 / 3_870_720.0,
        17.0 * n3 / 480.0 - 37.0 * n4 / 840.0 - 209.0 * n5 / 4480.0 + 5569.0 * n6 / 90720.0,
        4397.0 * n4 / 161_280.0 - 11.0 * n5 / 504.0 - 830_251.0 * n6 / 7_257_600.0,
        4583.0 * n5 / 161_280.0 - 108_847.0 * n6 / 3_991_680.0,
        20_648_693.0 * n6 / 638_668_800.0,
    ];
    Series {
        e,
        rect_a,
        alpha,
        beta,
    }
}

/// Standard 6-degree zone for a longitude (no Norway/Svalbard exceptions).
pub fn zone_for(lon: f64) -> u8 {
    let lon = ((lon + 180.0).rem_euclid(360.0)) - 180.0;
    let z = ((lon + 180.0) / 6.0).floor() as i32 + 1;
    z.clamp(1, 60) as u8
}

pub fn central_meridian(zone: u8) -> f64 {
    (zone as f64 - 1.0) * 6.0 - 180.0 + 3.0
}

fn check_lat_lon(lat: f64, lon: f64) -> Result<()> {
    if !lat.is_finite() || !lon.is_finite() || lat.abs() > 90.0 || lon.abs() > 180.0 {
        return Err(FedmapError::Precondition(format!("invalid coordinate ({lat}, {lon})")));
    }
    if !(-80.0..=84.0).contains(&lat) {
        return Err(FedmapError::UnsupportedLatitude(lat));
    }
    Ok(())
}

/// Projects into the point's own zone.
pub fn to_utm(lat: f64, lon: f64) -> Result<UtmCoord> {
    check_lat_lon(lat, lon)?;
    to_utm_in_zone(lat, lon, zone_for(lon))
}

/// Projects into a given zone (points near a boundary can be forced into a neighbour).
pub fn to_utm_in_zone(lat: f64, lon: f64, zone: u8) -> Result<UtmCoord> {
    check_lat_lon(lat, lon)?;
    let s = series();
    let phi = lat.to_radians();
    let mut lam = (lon - central_meridian(zone)).to_radians();
    lam = (lam + PI).rem_euclid(2.0 * PI) - PI;

    let tau = phi.tan();
    let sigma = (s.e * (s.e * tau / (1.0 + tau * tau).sqrt()).atanh()).sinh();
    let tau_p = tau * (1.0 + sigma * sigma).sqrt() - sigma * (1.0 + tau * tau).sqrt();
    let xi_p = tau_p.atan2(lam.cos());
    let eta_p = (lam.sin() / (tau_p * tau_p + lam.cos() * lam.cos()).sqrt()).asinh();

    let mut xi = xi_p;
    let mut eta = eta_p;
    for (j, a) in s.alpha.iter().enumerate() {
        let k = 2.0 * (j + 1) as f64;
        xi += a * (k * xi_p).sin() * (k * eta_p).cosh();
        eta += a * (k * xi_p).cos() * (k * eta_p).sinh();
    }
    let north = lat >= 0.0;
    let easting = FALSE_EASTING + K0 * s.rect_a * eta;
    let mut northing = K0 * s.rect_a * xi;
    if !north {
        northing += FALSE_NORTHING_SOUTH;
    }
    Ok(UtmCoord {
        easting,
        northing,
        zone,
        north,
    })
}

/// Inverse projection back to (lat, lon) degrees.
pub fn from_utm(c: UtmCoord) -> (f64, f64) {
    let s = series();
    let y = if c.north { c.northing } else { c.northing - FALSE_NORTHING_SOUTH };
    let xi = y / (K0 * s.rect_a);
    let eta = (c.easting - FALSE_EASTING) / (K0 * s.rect_a);

    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in s.beta.iter().enumerate() {
        let k = 2.0 * (j + 1) as f64;
        xi_p -= b * (k * xi).sin() * (k * eta).cosh();
        eta_p -= b * (k * xi).cos() * (k * eta).sinh();
    }
    let tau_p = xi_p.sin() / (eta_p.sinh().powi(2) + xi_p.cos().powi(2)).sqrt();
    let lam = eta_p.sinh().atan2(xi_p.cos());

    // Newton iteration for tau given the conformal tau'
    let e2 = s.e * s.e;
    let mut tau = tau_p;
    for _ in 0..8 {
        let sigma = (s.e * (s.e * tau / (1.0 + tau * tau).sqrt()).atanh()).sinh();
        let tau_i = tau * (1.0 + sigma * sigma).sqrt() - sigma * (1.0 + tau * tau).sqrt();
        let d = (tau_p - tau_i) / (1.0 + tau_i * tau_i).sqrt() * (1.0 + (1.0 - e2) * tau * tau)
            / ((1.0 - e2) * (1.0 + tau * tau).sqrt());
        tau += d;
        if d.abs() < 1e-14 {
            break;
        }
    }
    let lat = tau.atan().to_degrees();
    let lon = central_meridian(c.zone) + lam.to_degrees();
    (lat, lon)
}
