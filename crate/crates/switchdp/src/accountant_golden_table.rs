/// Oracle RDP values at q = 0.01, sigma = 1.0, integer orders 2..=64,
/// produced by scripts/rdp_oracle.py.
fn golden_rdp_table() -> Vec<(f64, f64)> {
    vec![
        (2.0, 0.00017181342207454793814),
        (3.0, 0.00026463757458466135937),
        (4.0, 0.00036315404891075673411),
        (5.0, 0.00046866724216915482345),
        (6.0, 0.00058349814893817421992),
        (7.0, 0.00071364645509635875497),
        (8.0, 0.00089364390760603189425),
        (9.0, 0.0017816620433830107364),
        (10.0, 0.038270418894948476399),
        (11.0, 0.44070496817263927182),
        (12.0, 0.97801171802536188891),
        (13.0, 1.5117286042950446655),
        (14.0, 2.0408275189351563771),
        (15.0, 2.5659773718232770389),
        (16.0, 3.0878507836962446159),
        (17.0, 3.6070185164290271211),
        (18.0, 4.1239417900100129189),
        (19.0, 4.6389886174702547508),
        (20.0, 5.1524530196774994873),
        (21.0, 5.6645715189701525187),
        (22.0, 6.1755360742736107756),
        (23.0, 6.685503925338004842),
        (24.0, 7.1946050339177441489),
        (25.0, 7.7029477268221793048),
        (26.0, 8.2106230080022877405),
        (27.0, 8.7177078843068511057),
        (28.0, 9.2242679554645739326),
        (29.0, 9.7303594502975169716),
        (30.0, 10.236030842107335458),
        (31.0, 10.74132414115521179),
        (32.0, 11.246275937048068857),
        (33.0, 11.75091824570107373),
        (34.0, 12.25527920231577503),
        (35.0, 12.759383632071257104),
        (36.0, 13.263253522983741676),
        (37.0, 13.766908419956707494),
        (38.0, 14.270365754931158103),
        (39.0, 14.77364112490696207),
        (40.0, 15.276748527191702355),
        (41.0, 15.7797005593622068),
        (42.0, 16.282508589963418778),
        (43.0, 16.78518290482171606),
        (44.0, 17.287732832942418178),
        (45.0, 17.790166855239452039),
        (46.0, 18.292492698767728848),
        (47.0, 18.794717418664341451),
        (48.0, 19.296847469629183305),
        (49.0, 19.798888768470490083),
        (50.0, 20.300846748991743523),
        (51.0, 20.802726410292146826),
        (52.0, 21.304532359384691175),
        (53.0, 21.80626884889675305),
        (54.0, 22.307939810502699382),
        (55.0, 22.809548884641758813),
        (56.0, 23.311099446993943356),
        (57.0, 23.812594632119264164),
        (58.0, 24.314037354608608805),
        (59.0, 24.815430328046596733),
        (60.0, 25.316776082046008799),
        (61.0, 25.818076977578773797),
        (62.0, 26.319335220798989122),
        (63.0, 26.82055287552822976),
        (64.0, 27.321731874551780219),
    ]
}
