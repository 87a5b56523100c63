//! Spherical geometry in degrees.

/// Great-circle angle between two points, in degrees (haversine form).
pub fn great_circle_deg(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * a.sqrt().min(1.0).asin().to_degrees()
}

/// Wraps a longitude into `(-180, 180]`.
pub fn wrap_lon(lon: f64) -> f64 {
    let w = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// Point reached from `(lat, lon)` after `distance_deg` along `bearing_deg`.
pub fn destination(lat: f64, lon: f64, bearing_deg: f64, distance_deg: f64) -> (f64, f64) {
    let (p1, l1) = (lat.to_radians(), lon.to_radians());
    let (b, d) = (bearing_deg.to_radians(), distance_deg.to_radians());
    let p2 = (p1.sin() * d.cos() + p1.cos() * d.sin() * b.cos())
        .clamp(-1.0, 1.0)
        .asin();
    let l2 = l1 + (b.sin() * d.sin() * p1.cos()).atan2(d.cos() - p1.sin() * p2.sin());
    (
        p2.to_degrees().clamp(-90.0, 90.0),
        wrap_lon(l2.to_degrees()),
    )
}

/// Distance between two days on a 365-day circle.
pub fn circular_day_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(365.0);
    d.min(365.0 - d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_distances() {
        assert!((great_circle_deg(0.0, 0.0, 0.0, 90.0) - 90.0).abs() < 1e-12);
        assert!((great_circle_deg(90.0, 0.0, -90.0, 0.0) - 180.0).abs() < 1e-9);
        assert!((great_circle_deg(10.0, 179.0, 10.0, -179.0) - 1.9696).abs() < 1e-3);
    }

    #[test]
    fn destination_round_trips_distance() {
        for (lat, lon, b, d) in [
            (40.0, -100.0, 30.0, 8.0),
            (-70.0, 170.0, 200.0, 15.0),
            (85.0, 0.0, 10.0, 9.0),
        ] {
            let (la, lo) = destination(lat, lon, b, d);
            assert!((great_circle_deg(lat, lon, la, lo) - d).abs() < 1e-9);
            assert!(lo > -180.0 && lo <= 180.0);
        }
    }

    #[test]
    fn wrap_and_days() {
        assert_eq!(wrap_lon(-180.0), 180.0);
        assert_eq!(wrap_lon(190.0), -170.0);
        assert_eq!(circular_day_distance(10.0, 360.0), 15.0);
    }
}
