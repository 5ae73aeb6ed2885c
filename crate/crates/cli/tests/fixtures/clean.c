/* Bookkeeping with no unsafe calls. */

int init_state ( char * buf , int width ) {
  state = width + height ;
  if ( state > limit ) { state = limit ; }
  return state ;
}

long load_item ( char * buf , int key ) {
  item = key * 2 ;
  result = item - offset ;
  return result ;
}
