// Generated offline by numerical quadrature; do not edit.

/// Lowest SNR (dB) covered by [`WADA_G`].
pub const WADA_DB_MIN: i32 = -20;
/// Highest SNR (dB) covered by [`WADA_G`].
pub const WADA_DB_MAX: i32 = 100;

/// `G(snr) = ln E|z| - E ln|z|` for `z = s + n`, where `|s|` is Gamma(0.4)
/// distributed with random sign and `n` is Gaussian, for snr = -20..=100 dB
/// in 1 dB steps.
pub const WADA_G: [f64; 121] = [
    0.40943470009600746,
    0.4094594951107451,
    0.4094976159139234,
    0.4095558462076725,
    0.40964412477339107,
    0.4097767964193445,
    0.40997421732108474,
    0.41026473214290715,
    0.41068699188213786,
    0.4112925105358729,
    0.4121482693469103,
    0.41333908045303014,
    0.41496933524312635,
    0.41716370948771025,
    0.42006640056779343,
    0.42383854937138665,
    0.42865365635742175,
    0.4346910273973772,
    0.4421275524042525,
    0.45112838616681705,
    0.4618373168232143,
    0.4743677270185066,
    0.4887950448545091,
    0.5051514392401787,
    0.5234232580501361,
    0.5435513826333148,
    0.5654343372144471,
    0.5889337041388447,
    0.6138811986902876,
    0.6400866703436653,
    0.6673463166372144,
    0.6954504983919243,
    0.7241906979566357,
    0.7533653320570323,
    0.7827842903877736,
    0.8122722025569834,
    0.8416705313486952,
    0.8708386493280522,
    0.899654083479995,
    0.9280121161787755,
    0.9558249180565556,
    0.9830203661156894,
    1.009540674075466,
    1.035340935238409,
    1.0603876534699301,
    1.0846573164629165,
    1.108135047766305,
    1.1308133600413637,
    1.1526910213244896,
    1.1737720382375858,
    1.1940647545772691,
    1.2135810600415726,
    1.2323357015816698,
    1.2503456886338709,
    1.2676297829981995,
    1.284208064154475,
    1.3001015611699867,
    1.3153319429229804,
    1.329921259050903,
    1.3438917247639883,
    1.3572655433984968,
    1.370064761292091,
    1.3823111502255228,
    1.3940261132836556,
    1.4052306105386487,
    1.4159451014488065,
    1.4261895013020127,
    1.43598314941329,
    1.445344787119675,
    1.4542925439046004,
    1.462843930233598,
    1.4710158358987953,
    1.4788245328542833,
    1.486285681682825,
    1.4934143409699128,
    1.5002249789760875,
    1.5067314870973552,
    1.5129471946864146,
    1.5188848848787013,
    1.5245568111271863,
    1.5299747142007858,
    1.5351498394440943,
    1.5400929541326287,
    1.5448143647883366,
    1.5493239343456768,
    1.5536310990805808,
    1.5577448852324556,
    1.5616739252648333,
    1.5654264737228163,
    1.5690104226562203,
    1.5724333165860103,
    1.5757023669989976,
    1.5788244663617839,
    1.5818062016498071,
    1.5846538673915556,
    1.5873734782311097,
    1.5899707810149524,
    1.5924512664110062,
    1.5948201800695727,
    1.5970825333370589,
    1.5992431135343892,
    1.6013064938127202,
    1.603277042599431,
    1.6051589326478606,
    1.6069561497042666,
    1.6086725008055538,
    1.6103116222213085,
    1.6118769870534893,
    1.6133719125069166,
    1.6147995668434516,
    1.6161629760324976,
    1.6174650301100855,
    1.6187084892584775,
    1.6198959896178777,
    1.6210300488414324,
    1.622113071404371,
    1.6231473536777123,
    1.6241350887766215,
    1.6250783711931212,
    1.6259792012224379,
    1.6268394891920064,
];
